//! Builders for the published architectures and the desk-scale pair.
//!
//! Table entries "conv 3x3xc" of the maxout networks become a padded
//! `Conv` with `2c` outputs followed by `Maxout { pieces: 2 }`. Pooling with
//! "an overlap of 2x2" means stride 2; a 2x2 window at that stride has no
//! overlap. The FitNet fully-connected layer is a 500-unit maxout layer with
//! two pieces, which reproduces the reported parameter totals.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{ArchitectureSpec, FeatureShape, LayerSpec};
use crate::error::{Error, Result};

pub const PAPER_ARCHITECTURES: &[&str] = &[
    "fitnet-5-layer-30m",
    "fitnet-7-layer-30m",
    "fitnet-9-layer-30m",
    "fitnet-11-layer-30m",
    "fitnet-5-layer-107m",
    "fitnet-7-layer-107m",
    "fitnet-9-layer-107m",
    "fitnet-11-layer-107m",
    "fitnet1",
    "fitnet2",
    "fitnet3",
    "fitnet4",
    "mnist-teacher",
    "mnist-student",
    "aflw-teacher",
    "aflw-fitnet1",
    "aflw-fitnet2",
    "desk-teacher",
    "desk-student",
];

const MAXOUT_PIECES: usize = 2;
const FITNET_FC_UNITS: usize = 500;
const FITNET_FC_PIECES: usize = 2;

struct Builder {
    layers: Vec<LayerSpec>,
}

impl Builder {
    fn new() -> Self {
        Builder { layers: Vec::new() }
    }

    fn maxout_conv(mut self, k: usize, channels: usize, padded: bool) -> Self {
        self.layers.push(LayerSpec::Conv {
            kh: k,
            kw: k,
            out_channels: channels * MAXOUT_PIECES,
            padded,
        });
        self.layers.push(LayerSpec::Maxout { pieces: MAXOUT_PIECES });
        self
    }

    fn relu_conv(mut self, k: usize, channels: usize) -> Self {
        self.layers.push(LayerSpec::Conv {
            kh: k,
            kw: k,
            out_channels: channels,
            padded: false,
        });
        self.layers.push(LayerSpec::Relu);
        self
    }

    fn pool(mut self, window: usize, overlap: usize) -> Self {
        self.layers.push(LayerSpec::MaxPool {
            wh: window,
            ww: window,
            oh: overlap,
            ow: overlap,
        });
        self
    }

    fn gpool(mut self) -> Self {
        self.layers.push(LayerSpec::GlobalMaxPool);
        self
    }

    fn fc(mut self, units: usize, pieces: usize) -> Self {
        self.layers.push(LayerSpec::FullyConnected { units, pieces });
        self
    }

    fn softmax(mut self, classes: usize) -> Vec<LayerSpec> {
        self.layers.push(LayerSpec::SoftmaxHead { classes });
        self.layers
    }

    fn sigmoid(mut self) -> Vec<LayerSpec> {
        self.layers.push(LayerSpec::FullyConnected { units: 1, pieces: 1 });
        self.layers.push(LayerSpec::Sigmoid);
        self.layers
    }

    /// Padded 3x3 maxout convolutions; `0` in `plan` marks a pooling stage.
    /// The last pooling stage is `last_pool x last_pool`.
    fn fitnet_body(mut self, plan: &[usize], last_pool: usize) -> Self {
        let pools = plan.iter().filter(|&&c| c == 0).count();
        let mut seen = 0;
        for &c in plan {
            if c == 0 {
                seen += 1;
                self = if seen == pools { self.pool(last_pool, 0) } else { self.pool(2, 0) };
            } else {
                self = self.maxout_conv(3, c, true);
            }
        }
        self
    }
}

fn cifar_fitnet(name: &str, plan: &[usize], guided: usize) -> ArchitectureSpec {
    let layers = Builder::new()
        .fitnet_body(plan, 8)
        .fc(FITNET_FC_UNITS, FITNET_FC_PIECES)
        .softmax(10);
    ArchitectureSpec::new(name, FeatureShape::new(3, 32, 32), layers).with_hint(guided, 2)
}

/// Returns the named architecture, including its hint/guided pair when the
/// source table declares one.
pub fn build_paper_arch(name: &str) -> Result<ArchitectureSpec> {
    let arch = match name {
        // Depth experiment, 30M and 107M multiplication budgets.
        "fitnet-5-layer-30m" => cifar_fitnet(name, &[64, 0, 64, 0, 64, 0], 2),
        "fitnet-5-layer-107m" => cifar_fitnet(name, &[128, 0, 128, 0, 128, 0], 2),
        "fitnet-7-layer-30m" => cifar_fitnet(name, &[16, 32, 0, 32, 64, 0, 64, 0], 4),
        "fitnet-7-layer-107m" => cifar_fitnet(name, &[32, 64, 0, 80, 80, 0, 128, 0], 4),
        "fitnet-9-layer-30m" => cifar_fitnet(name, &[16, 32, 0, 32, 32, 32, 0, 48, 64, 0], 5),
        "fitnet-9-layer-107m" => cifar_fitnet(name, &[32, 32, 0, 64, 80, 80, 0, 96, 128, 0], 5),
        "fitnet-11-layer-30m" => {
            cifar_fitnet(name, &[16, 16, 16, 0, 32, 32, 32, 0, 48, 48, 64, 0], 7)
        }
        "fitnet-11-layer-107m" => {
            cifar_fitnet(name, &[16, 32, 32, 0, 48, 64, 80, 0, 96, 96, 128, 0], 7)
        }
        // Performance/efficiency trade-off.
        "fitnet1" => cifar_fitnet(name, &[16, 16, 16, 0, 32, 32, 32, 0, 48, 48, 64, 0], 6),
        "fitnet2" => cifar_fitnet(name, &[16, 32, 32, 0, 48, 64, 80, 0, 96, 96, 128, 0], 6),
        "fitnet3" => cifar_fitnet(
            name,
            &[32, 48, 64, 64, 0, 80, 80, 80, 80, 0, 128, 128, 128, 0],
            8,
        ),
        "fitnet4" => cifar_fitnet(
            name,
            &[
                32, 32, 32, 48, 48, 0, 80, 80, 80, 80, 80, 80, 0, 128, 128, 128, 128, 128, 128, 0,
            ],
            11,
        ),
        // 48-48-24 maxout units, 4x4/4x4/2x2 pooling at stride 2, padding on
        // the second and third convolutions.
        "mnist-teacher" => {
            let layers = Builder::new()
                .maxout_conv(7, 48, false)
                .pool(4, 2)
                .maxout_conv(7, 48, true)
                .pool(4, 2)
                .maxout_conv(5, 24, true)
                .pool(2, 0)
                .softmax(10);
            ArchitectureSpec::new(name, FeatureShape::new(1, 28, 28), layers)
        }
        // 16-16-16-16-12-12 maxout units, pooling after every second layer.
        "mnist-student" => {
            let layers = Builder::new()
                .maxout_conv(3, 16, true)
                .maxout_conv(3, 16, true)
                .pool(4, 2)
                .maxout_conv(3, 16, true)
                .maxout_conv(3, 16, true)
                .pool(4, 2)
                .maxout_conv(3, 12, true)
                .maxout_conv(3, 12, true)
                .pool(2, 0)
                .softmax(10);
            ArchitectureSpec::new(name, FeatureShape::new(1, 28, 28), layers).with_hint(4, 2)
        }
        // 16x16 face patches; unpadded ReLU convolutions.
        "aflw-teacher" => {
            let layers = Builder::new()
                .relu_conv(3, 128)
                .pool(2, 0)
                .relu_conv(2, 512)
                .relu_conv(5, 512)
                .sigmoid();
            ArchitectureSpec::new(name, FeatureShape::new(3, 16, 16), layers)
        }
        "aflw-fitnet1" => aflw_fitnet(name, &[16, 32, 32, 32, 32, 32, 32]),
        "aflw-fitnet2" => aflw_fitnet(name, &[32, 64, 64, 64, 64, 64, 64]),
        "desk-teacher" => {
            let layers = Builder::new()
                .maxout_conv(5, 16, true)
                .pool(4, 2)
                .maxout_conv(5, 32, true)
                .pool(4, 2)
                .maxout_conv(3, 32, true)
                .gpool()
                .fc(64, 2)
                .softmax(10);
            ArchitectureSpec::new(name, FeatureShape::new(1, 14, 14), layers)
        }
        // FitNet 1 with every width halved; the final pool is global so the
        // stack works on small inputs.
        "desk-student" => {
            let layers = Builder::new()
                .fitnet_body(&[8, 8, 8, 0, 16, 16, 16, 0, 24, 24, 32], 2)
                .gpool()
                .fc(FITNET_FC_UNITS / 2, FITNET_FC_PIECES)
                .softmax(10);
            ArchitectureSpec::new(name, FeatureShape::new(1, 14, 14), layers).with_hint(6, 2)
        }
        _ => return Err(Error::UnknownArchitecture(name.to_string())),
    };
    Ok(arch)
}

fn aflw_fitnet(name: &str, widths: &[usize]) -> ArchitectureSpec {
    let mut b = Builder::new();
    for &w in widths {
        b = b.relu_conv(3, w);
    }
    ArchitectureSpec::new(String::from(name), FeatureShape::new(3, 16, 16), b.sigmoid()).with_hint(5, 3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netarch::{count_mults, count_params, infer_shapes};

    fn within(value: u64, target: f64, tol: f64) -> bool {
        ((value as f64) - target).abs() <= tol * target
    }

    #[test]
    fn every_builder_traces() {
        for name in PAPER_ARCHITECTURES {
            let a = build_paper_arch(name).unwrap();
            let t = infer_shapes(&a).unwrap_or_else(|e| panic!("{name}: {e}"));
            let classes = if name.starts_with("aflw") { 1 } else { 10 };
            assert_eq!(t.output().channels, classes, "{name}");
            if let Some(h) = a.hint {
                assert!(h.guided <= a.conv_count(), "{name}");
            }
        }
        assert!(matches!(build_paper_arch("resnet"), Err(Error::UnknownArchitecture(_))));
    }

    #[test]
    fn fitnet4_layout() {
        let a = build_paper_arch("fitnet4").unwrap();
        assert_eq!(a.conv_count(), 17);
        assert_eq!(a.depth(), 19);
        assert_eq!(a.hint.unwrap(), crate::netarch::HintPair { guided: 11, hint: 2 });
        assert!(within(count_params(&a).unwrap(), 2.5e6, 0.10));
        assert!(within(count_mults(&a).unwrap(), 382e6, 0.05));
    }

    #[test]
    fn fitnet1_hand_trace() {
        // 32 -> pool 16 -> pool 8 -> pool 8x8 -> 1; last conv has 64 units.
        let a = build_paper_arch("fitnet1").unwrap();
        let t = infer_shapes(&a).unwrap();
        let n = a.layers.len();
        assert_eq!(t.shape_after(n - 1), FeatureShape::new(500, 1, 1));
        assert_eq!(t.shape_after(n - 2), FeatureShape::new(64, 1, 1));
        assert_eq!(a.depth(), 11);
        assert!(within(count_params(&a).unwrap(), 250e3, 0.10));
    }

    #[test]
    fn table3_widths() {
        // FitNet 2 and 3 rows: ~862K / ~108M and ~1.6M / ~392M. The FitNet 3
        // layer table yields about 324M multiplications.
        let f2 = build_paper_arch("fitnet2").unwrap();
        assert!(within(count_params(&f2).unwrap(), 862e3, 0.05));
        assert!(within(count_mults(&f2).unwrap(), 108e6, 0.05));
        let f3 = build_paper_arch("fitnet3").unwrap();
        assert_eq!(f3.depth(), 13);
        assert!(within(count_params(&f3).unwrap(), 1.6e6, 0.10));
        assert!(within(count_mults(&f3).unwrap(), 392e6, 0.20));
    }

    #[test]
    fn mnist_student() {
        let a = build_paper_arch("mnist-student").unwrap();
        let widths: Vec<usize> = a
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { out_channels, .. } => Some(out_channels / 2),
                _ => None,
            })
            .collect();
        assert_eq!(widths, [16, 16, 16, 16, 12, 12]);
        assert_eq!(a.hint.unwrap(), crate::netarch::HintPair { guided: 4, hint: 2 });
        let teacher = build_paper_arch("mnist-teacher").unwrap();
        let ratio = count_params(&teacher).unwrap() as f64 / count_params(&a).unwrap() as f64;
        // "12 times less parameters", roughly 8%.
        assert!((10.0..16.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn desk_pair_is_compatible() {
        let t = build_paper_arch("desk-teacher").unwrap();
        let s = build_paper_arch("desk-student").unwrap();
        let h = s.hint.unwrap();
        let tt = infer_shapes(&t).unwrap();
        let st = infer_shapes(&s).unwrap();
        let hint = tt.shape_after(t.prefix_through_conv(h.hint).unwrap());
        let guided = st.shape_after(s.prefix_through_conv(h.guided).unwrap());
        assert_eq!(hint, FeatureShape::new(32, 2, 2));
        assert_eq!(guided, FeatureShape::new(16, 3, 3));
        assert!(s.conv_count() > t.conv_count());
    }
}
