//! Layer table of the network and the analytic parameter, operation and
//! receptive-field counts derived from it.

use super::ModelConfig;

/// Resolution divisor of each encoder level.
pub(crate) const LEVEL_DIVISORS: [usize; 4] = [1, 2, 8, 32];
/// Max-pool kernel (= stride) in front of blocks 2, 3 and 4.
pub(crate) const POOL_KERNELS: [usize; 3] = [2, 4, 4];

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct ConvLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub level: usize,
}

impl ConvLayer {
    fn new(name: &str, in_channels: usize, out_channels: usize, kernel: usize, level: usize) -> Self {
        Self {
            name: name.to_owned(),
            in_channels,
            out_channels,
            kernel,
            level,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    fn params(&self) -> usize {
        self.out_channels * (self.in_channels * self.kernel * self.kernel + 1)
    }
}

/// Every convolution of the network in forward order.
pub(crate) fn conv_layers(cfg: &ModelConfig) -> Vec<ConvLayer> {
    let [c1, c2, c3, c4] = cfg.channels();
    let agg = cfg.dim / 4;
    let mut layers = vec![
        ConvLayer::new("block1.conv1", 3, c1, 3, 0),
        ConvLayer::new("block1.conv2", c1, c1, 3, 0),
    ];
    for (i, (cin, cout)) in [(c1, c2), (c2, c3), (c3, c4)].into_iter().enumerate() {
        let block = format!("block{}", i + 2);
        layers.push(ConvLayer::new(&format!("{block}.conv1"), cin, cout, 3, i + 1));
        layers.push(ConvLayer::new(&format!("{block}.conv2"), cout, cout, 3, i + 1));
        if cin != cout {
            layers.push(ConvLayer::new(&format!("{block}.shortcut"), cin, cout, 1, i + 1));
        }
    }
    for (i, c) in [c1, c2, c3, c4].into_iter().enumerate() {
        layers.push(ConvLayer::new(&format!("agg{}", i + 1), c, agg, 1, i));
    }
    if cfg.n_head == 2 {
        layers.push(ConvLayer::new("head1", cfg.dim, cfg.dim, 1, 0));
    }
    layers.push(ConvLayer::new("head_out", cfg.dim, cfg.dim + 1, 1, 0));
    layers
}

/// Number of weight and bias scalars.
pub fn count_params(cfg: &ModelConfig) -> usize {
    conv_layers(cfg).iter().map(ConvLayer::params).sum()
}

/// Floating-point operations of one forward pass on a `width×height` image.
///
/// A multiply-accumulate counts as one operation, the convention behind the
/// published per-model figures. Besides convolutions (including bias adds)
/// the count covers activations, residual additions, pooling comparisons,
/// bilinear upsampling (four multiply-accumulates per output value), the
/// descriptor normalization and the score sigmoid.
pub fn count_flops(cfg: &ModelConfig, width: usize, height: usize) -> u64 {
    let pixels = |level: usize| {
        let d = LEVEL_DIVISORS[level];
        ((width / d) * (height / d)) as u64
    };
    let mut total = 0u64;
    for l in conv_layers(cfg) {
        let per_pixel = l.out_channels * (l.in_channels * l.kernel * l.kernel + 1);
        total += pixels(l.level) * per_pixel as u64;
    }
    let [c1, c2, c3, c4] = cfg.channels();
    // two ReLUs in block 1; ReLU, residual add and ReLU in blocks 2-4
    total += pixels(0) * 2 * c1 as u64;
    for (level, c) in [(1, c2), (2, c3), (3, c4)] {
        total += pixels(level) * 3 * c as u64;
    }
    for (i, (&k, c)) in POOL_KERNELS.iter().zip([c1, c2, c3]).enumerate() {
        total += pixels(i + 1) * c as u64 * (k * k - 1) as u64;
    }
    let full = pixels(0);
    total += 3 * full * (cfg.dim / 4) as u64 * 4;
    if cfg.n_head == 2 {
        total += full * cfg.dim as u64;
    }
    total += full * (2 * cfg.dim as u64 + 1);
    total += full * 3;
    total
}

/// One spatial stage of a feed-forward path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stage {
    pub kernel: usize,
    pub stride: usize,
}

impl Stage {
    pub const fn conv3() -> Self {
        Self { kernel: 3, stride: 1 }
    }

    pub const fn pool(k: usize) -> Self {
        Self { kernel: k, stride: k }
    }
}

/// Receptive field of the last stage: `r ← r + (k−1)·j`, `j ← j·stride`.
pub fn receptive_field_of(stages: &[Stage]) -> usize {
    let (mut r, mut j) = (1, 1);
    for s in stages {
        r += (s.kernel - 1) * j;
        j *= s.stride;
    }
    r
}

/// Receptive field of the deepest encoder output. Channel widths do not
/// enter; the 1×1 shortcuts never lie on the widest path.
pub fn receptive_field(_cfg: &ModelConfig) -> usize {
    let mut stages = vec![Stage::conv3(), Stage::conv3()];
    for k in POOL_KERNELS {
        stages.extend([Stage::pool(k), Stage::conv3(), Stage::conv3()]);
    }
    receptive_field_of(&stages)
}
