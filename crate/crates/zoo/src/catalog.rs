//! Named architectures, looked up at runtime through a registry of trait objects.

use rtsr_core::ActivationKind;

use crate::error::{Result, ZooError};
use crate::spec::{Layer, ModelSpec};
use crate::template::BlockTemplate;

/// A model family that can describe itself at a given feature width.
pub trait Architecture: Send + Sync {
    fn name(&self) -> &str;
    fn summary(&self) -> &str;
    /// Mandatory entries are covered by the equivalence and budget checks.
    fn mandatory(&self) -> bool;
    fn default_width(&self) -> usize;
    fn spec(&self, width: usize) -> ModelSpec;
}

struct Entry {
    name: &'static str,
    summary: &'static str,
    mandatory: bool,
    width: usize,
    build: fn(&'static str, usize) -> ModelSpec,
}

impl Architecture for Entry {
    fn name(&self) -> &str {
        self.name
    }

    fn summary(&self) -> &str {
        self.summary
    }

    fn mandatory(&self) -> bool {
        self.mandatory
    }

    fn default_width(&self) -> usize {
        self.width
    }

    fn spec(&self, width: usize) -> ModelSpec {
        (self.build)(self.name, width)
    }
}

#[derive(Default)]
pub struct Registry {
    entries: Vec<Box<dyn Architecture>>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    /// Registry holding every built-in architecture.
    pub fn builtin() -> Self {
        let mut r = Registry::new();
        for e in builtin_entries() {
            r.register(Box::new(e)).expect("built-in names are unique");
        }
        r
    }

    pub fn register(&mut self, arch: Box<dyn Architecture>) -> Result<()> {
        if self.get(arch.name()).is_some() {
            return Err(ZooError::Duplicate(arch.name().to_string()));
        }
        self.entries.push(arch);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&dyn Architecture> {
        self.entries.iter().find(|e| e.name() == name).map(|e| e.as_ref())
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Architecture> {
        self.entries.iter().map(|e| e.as_ref())
    }

    /// Spec of `name` at `width`, or the architecture's default width.
    pub fn spec(&self, name: &str, width: Option<usize>) -> Result<ModelSpec> {
        let arch = self.get(name).ok_or_else(|| ZooError::UnknownModel(name.to_string()))?;
        let spec = arch.spec(width.unwrap_or(arch.default_width()));
        spec.validate()?;
        Ok(spec)
    }
}

/// Default-width specs of every built-in architecture, mandatory ones first.
pub fn zoo_catalog() -> Vec<ModelSpec> {
    let reg = Registry::builtin();
    let mut out: Vec<(bool, ModelSpec)> = reg
        .iter()
        .map(|a| (!a.mandatory(), a.spec(a.default_width())))
        .collect();
    out.sort_by_key(|(optional, _)| *optional);
    out.into_iter().map(|(_, s)| s).collect()
}

pub fn mandatory_names() -> Vec<&'static str> {
    builtin_entries().into_iter().filter(|e| e.mandatory).map(|e| e.name).collect()
}

fn conv(in_ch: usize, out_ch: usize, kernel: usize, bias: bool) -> Layer {
    Layer::Conv {
        in_ch,
        out_ch,
        kernel,
        stride: 1,
        bias,
    }
}

fn rep(block: BlockTemplate) -> Layer {
    Layer::RepBlock { block, bias: true }
}

fn act(kind: ActivationKind) -> Layer {
    Layer::Activation { kind }
}

const RELU: ActivationKind = ActivationKind::Relu;
const GELU: ActivationKind = ActivationKind::GeluTanhApprox;

fn spec(name: &str, channels: usize, layers: Vec<Layer>) -> ModelSpec {
    ModelSpec {
        name: name.to_string(),
        scale: 4,
        channels,
        layers,
    }
}

fn reptcn(name: &'static str, c: usize) -> ModelSpec {
    spec(
        name,
        c,
        vec![
            conv(3, c, 3, true),
            act(RELU),
            rep(BlockTemplate::RepVgg { in_ch: c, out_ch: c }),
            act(RELU),
            conv(c, 48, 3, true),
            Layer::PixelShuffle { r: 4 },
        ],
    )
}

fn lanczos_pp(name: &'static str, c: usize) -> ModelSpec {
    let block = |in_ch, out_ch| Layer::RepBlock {
        block: BlockTemplate::ResidualExpand { in_ch, out_ch, expand: 4 },
        bias: false,
    };
    spec(
        name,
        c,
        vec![
            Layer::PixelUnshuffle { r: 3 },
            block(27, c),
            act(RELU),
            block(c, c),
            act(RELU),
            conv(c, 3 * 144, 1, false),
            Layer::PixelShuffle { r: 12 },
        ],
    )
}

fn span_micro(name: &'static str, c: usize) -> ModelSpec {
    span_with_depth(name, c, 2)
}

/// SPAN-style net with `depth` attention blocks; taps the stem and first block output.
pub fn span_with_depth(name: &str, c: usize, depth: usize) -> ModelSpec {
    let mut layers = vec![conv(3, c, 3, true)];
    for _ in 0..depth.max(1) {
        layers.push(Layer::Spab {
            channels: c,
            bias: true,
            block: Some(BlockTemplate::ResidualExpand { in_ch: c, out_ch: c, expand: 2 }),
        });
    }
    layers.push(conv(c, c, 3, true));
    layers.push(Layer::ConcatTaps { taps: vec![0, 1] });
    layers.push(conv(3 * c, c, 1, true));
    layers.push(conv(c, 48, 3, true));
    layers.push(Layer::PixelShuffle { r: 4 });
    spec(name, c, layers)
}

fn c3(name: &'static str, c: usize) -> ModelSpec {
    spec(
        name,
        c,
        vec![
            conv(3, c, 3, true),
            act(RELU),
            rep(BlockTemplate::RepVgg { in_ch: c, out_ch: c }),
            act(RELU),
            conv(c, 48, 3, true),
            Layer::PixelShuffle { r: 4 },
        ],
    )
}

fn anunet(name: &'static str, c: usize) -> ModelSpec {
    let mut layers = vec![
        Layer::PixelUnshuffle { r: 2 },
        rep(BlockTemplate::Ecb { in_ch: 12, out_ch: c, expand: 2 }),
        act(GELU),
    ];
    for _ in 0..3 {
        layers.push(rep(BlockTemplate::Nested { channels: c, expand: 2 }));
        layers.push(act(GELU));
    }
    layers.extend([
        rep(BlockTemplate::Ecb { in_ch: c, out_ch: 192, expand: 1 }),
        Layer::PixelShuffle { r: 2 },
        Layer::AnchorResidual { r: 4 },
        Layer::PixelShuffle { r: 4 },
    ]);
    spec(name, c, layers)
}

fn resr(name: &'static str, c: usize) -> ModelSpec {
    let mut layers = vec![
        Layer::PixelUnshuffle { r: 2 },
        rep(BlockTemplate::Ecb { in_ch: 12, out_ch: c, expand: 2 }),
        act(RELU),
    ];
    for _ in 0..6 {
        layers.push(rep(BlockTemplate::Ecb { in_ch: c, out_ch: c, expand: 2 }));
        layers.push(act(RELU));
    }
    layers.extend([
        rep(BlockTemplate::Ecb { in_ch: c, out_ch: 192, expand: 1 }),
        Layer::PixelShuffle { r: 8 },
    ]);
    spec(name, c, layers)
}

fn vpeg_r(name: &'static str, c: usize) -> ModelSpec {
    let mut layers = vec![Layer::PixelUnshuffle { r: 2 }, conv(12, c, 3, true)];
    for _ in 0..3 {
        layers.push(rep(BlockTemplate::Rrrb { channels: c, expand: 2 }));
        layers.push(act(RELU));
    }
    layers.extend([conv(c, 192, 3, true), Layer::PixelShuffle { r: 8 }]);
    spec(name, c, layers)
}

fn pixelartai(name: &'static str, c: usize) -> ModelSpec {
    spec(
        name,
        c,
        vec![
            Layer::Conv {
                in_ch: 3,
                out_ch: c,
                kernel: 3,
                stride: 2,
                bias: true,
            },
            act(RELU),
            rep(BlockTemplate::Ecb { in_ch: c, out_ch: c, expand: 2 }),
            act(RELU),
            rep(BlockTemplate::Ecb { in_ch: c, out_ch: c, expand: 2 }),
            act(RELU),
            conv(c, 192, 3, true),
            Layer::PixelShuffle { r: 8 },
        ],
    )
}

fn urpnet(name: &'static str, c: usize) -> ModelSpec {
    spec(
        name,
        c,
        vec![
            Layer::PixelUnshuffle { r: 2 },
            rep(BlockTemplate::RepVgg { in_ch: 12, out_ch: c }),
            act(RELU),
            rep(BlockTemplate::RepVgg { in_ch: c, out_ch: c }),
            act(RELU),
            conv(c, 192, 1, true),
            Layer::PixelShuffle { r: 8 },
        ],
    )
}

fn etds(name: &'static str, c: usize) -> ModelSpec {
    let total = c + 3;
    let mut layers = vec![conv(3, total, 3, true), act(RELU)];
    for _ in 0..2 {
        layers.push(rep(BlockTemplate::DualStream { backbone: c, residual: 3 }));
        layers.push(act(RELU));
    }
    layers.extend([conv(total, 48, 3, true), Layer::PixelShuffle { r: 4 }]);
    spec(name, c, layers)
}

fn builtin_entries() -> Vec<Entry> {
    vec![
        Entry {
            name: "reptcn",
            summary: "three convs; the middle one is a RepVGG block",
            mandatory: true,
            width: 16,
            build: reptcn,
        },
        Entry {
            name: "lanczos_pp",
            summary: "x3 unshuffle, two widening residual rep-blocks, bias-free, 1x1 head, x12 shuffle",
            mandatory: true,
            width: 24,
            build: lanczos_pp,
        },
        Entry {
            name: "span_micro",
            summary: "two parameter-free attention blocks with concatenated taps",
            mandatory: true,
            width: 12,
            build: span_micro,
        },
        Entry {
            name: "c3",
            summary: "three-layer conv net at width 32 with a RepVGG middle layer",
            mandatory: true,
            width: 32,
            build: c3,
        },
        Entry {
            name: "anunet",
            summary: "x2 unshuffle, edge-oriented and nested blocks, anchor residual",
            mandatory: true,
            width: 28,
            build: anunet,
        },
        Entry {
            name: "resr",
            summary: "x2 unshuffle, eight edge-oriented blocks, x8 shuffle",
            mandatory: true,
            width: 16,
            build: resr,
        },
        Entry {
            name: "vpeg_r",
            summary: "x2 unshuffle, three residual rep-blocks, x8 shuffle",
            mandatory: true,
            width: 6,
            build: vpeg_r,
        },
        Entry {
            name: "pixelartai",
            summary: "stride-2 stem, two edge-oriented blocks, x8 shuffle",
            mandatory: false,
            width: 32,
            build: pixelartai,
        },
        Entry {
            name: "urpnet",
            summary: "x2 unshuffle, two RepVGG blocks, 1x1 head",
            mandatory: false,
            width: 18,
            build: urpnet,
        },
        Entry {
            name: "etds",
            summary: "dual-stream blocks carrying a 3-channel residual stream",
            mandatory: false,
            width: 16,
            build: etds,
        },
    ]
}
