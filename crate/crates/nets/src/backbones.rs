//! Backbone architectures without their classification tops.

use std::fmt;
use std::str::FromStr;

use fer_core::image::{CHANNELS, STANDARD_SIDE};
use fer_core::preprocess::NormalizationScheme;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::graph::{Graph, GraphBuilder};
use crate::ops::Padding;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Vgg16,
    Vgg19,
    InceptionV3,
    InceptionResNetV2,
    /// A few small convolution stages behind the same interface, for tests.
    Surrogate,
}

impl BackboneKind {
    pub const PRETRAINED: [BackboneKind; 4] = [
        BackboneKind::Vgg16,
        BackboneKind::Vgg19,
        BackboneKind::InceptionV3,
        BackboneKind::InceptionResNetV2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::Vgg16 => "vgg16",
            BackboneKind::Vgg19 => "vgg19",
            BackboneKind::InceptionV3 => "inceptionv3",
            BackboneKind::InceptionResNetV2 => "inceptionresnetv2",
            BackboneKind::Surrogate => "surrogate",
        }
    }

    pub fn spec(self) -> BackboneSpec {
        let (total_layers, unfreeze_depth, normalization, total, trainable) = match self {
            BackboneKind::Vgg16 => (
                19,
                5,
                NormalizationScheme::BgrMeanCentered,
                Some(14_714_688),
                Some(7_079_424),
            ),
            BackboneKind::Vgg19 => (
                22,
                9,
                NormalizationScheme::BgrMeanCentered,
                Some(20_024_384),
                Some(14_158_848),
            ),
            BackboneKind::InceptionV3 => (
                311,
                140,
                NormalizationScheme::UnitInterval,
                Some(21_802_784),
                Some(16_215_936),
            ),
            BackboneKind::InceptionResNetV2 => (
                780,
                371,
                NormalizationScheme::UnitInterval,
                Some(54_336_736),
                Some(40_442_464),
            ),
            BackboneKind::Surrogate => (8, 4, NormalizationScheme::UnitInterval, None, None),
        };
        BackboneSpec {
            kind: self,
            total_layers,
            unfreeze_depth,
            normalization,
            expected_total_params: total,
            expected_trainable_params: trainable,
        }
    }

    pub fn build(self) -> Graph {
        match self {
            BackboneKind::Vgg16 => vgg(self.as_str(), &[2, 2, 3, 3, 3]),
            BackboneKind::Vgg19 => vgg(self.as_str(), &[2, 2, 4, 4, 4]),
            BackboneKind::InceptionV3 => inception_v3(),
            BackboneKind::InceptionResNetV2 => inception_resnet_v2(),
            BackboneKind::Surrogate => surrogate(),
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match norm.as_str() {
            "vgg16" => BackboneKind::Vgg16,
            "vgg19" => BackboneKind::Vgg19,
            "inceptionv3" => BackboneKind::InceptionV3,
            "inceptionresnetv2" => BackboneKind::InceptionResNetV2,
            "surrogate" => BackboneKind::Surrogate,
            _ => return Err(Error::Config(format!("unknown backbone `{s}`"))),
        })
    }
}

/// Published features of a backbone. Parameter expectations are absent for
/// the surrogate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub total_layers: usize,
    pub unfreeze_depth: usize,
    pub normalization: NormalizationScheme,
    pub expected_total_params: Option<usize>,
    pub expected_trainable_params: Option<usize>,
}

fn vgg(name: &str, convs_per_block: &[usize]) -> Graph {
    let mut b = GraphBuilder::new(name);
    let mut x = b.input(STANDARD_SIDE, CHANNELS);
    let filters = [64, 128, 256, 512, 512];
    for (block, (&n, &f)) in convs_per_block.iter().zip(&filters).enumerate() {
        for i in 1..=n {
            let name = format!("block{}_conv{i}", block + 1);
            x = b.conv(x, Some(&name), f, (3, 3), 1, Padding::Same, true, true);
        }
        x = b.max_pool(x, Some(&format!("block{}_pool", block + 1)), 2, 2, Padding::Valid);
    }
    b.finish(x)
}

/// Bias-free convolution, unscaled batch norm and ReLU, optionally named
/// `<name>`, `<name>_bn`, `<name>_ac`.
fn conv_bn(
    b: &mut GraphBuilder,
    x: usize,
    filters: usize,
    kernel: (usize, usize),
    stride: usize,
    padding: Padding,
    name: Option<&str>,
) -> usize {
    let x = b.conv(x, name, filters, kernel, stride, padding, false, false);
    let x = b.batch_norm(x, name.map(|n| format!("{n}_bn")).as_deref(), false);
    b.relu(x, name.map(|n| format!("{n}_ac")).as_deref())
}

fn inception_v3() -> Graph {
    use Padding::{Same, Valid};
    let mut b = GraphBuilder::new("inceptionv3");
    let cb = |b: &mut GraphBuilder, x, f, r, c, s, p| conv_bn(b, x, f, (r, c), s, p, None);
    let x = b.input(STANDARD_SIDE, CHANNELS);
    let x = cb(&mut b, x, 32, 3, 3, 2, Valid);
    let x = cb(&mut b, x, 32, 3, 3, 1, Valid);
    let x = cb(&mut b, x, 64, 3, 3, 1, Same);
    let x = b.max_pool(x, None, 3, 2, Valid);
    let x = cb(&mut b, x, 80, 1, 1, 1, Valid);
    let x = cb(&mut b, x, 192, 3, 3, 1, Valid);
    let mut x = b.max_pool(x, None, 3, 2, Valid);

    for (i, pool_filters) in [32, 64, 64].into_iter().enumerate() {
        let b1 = cb(&mut b, x, 64, 1, 1, 1, Same);
        let b5 = cb(&mut b, x, 48, 1, 1, 1, Same);
        let b5 = cb(&mut b, b5, 64, 5, 5, 1, Same);
        let d = cb(&mut b, x, 64, 1, 1, 1, Same);
        let d = cb(&mut b, d, 96, 3, 3, 1, Same);
        let d = cb(&mut b, d, 96, 3, 3, 1, Same);
        let p = b.avg_pool(x, None, 3, 1, Same);
        let p = cb(&mut b, p, pool_filters, 1, 1, 1, Same);
        x = b.concat(&[b1, b5, d, p], Some(&format!("mixed{i}")));
    }

    let b3 = cb(&mut b, x, 384, 3, 3, 2, Valid);
    let d = cb(&mut b, x, 64, 1, 1, 1, Same);
    let d = cb(&mut b, d, 96, 3, 3, 1, Same);
    let d = cb(&mut b, d, 96, 3, 3, 2, Valid);
    let p = b.max_pool(x, None, 3, 2, Valid);
    x = b.concat(&[b3, d, p], Some("mixed3"));

    for (i, width) in [128, 160, 160, 192].into_iter().enumerate() {
        let b1 = cb(&mut b, x, 192, 1, 1, 1, Same);
        let b7 = cb(&mut b, x, width, 1, 1, 1, Same);
        let b7 = cb(&mut b, b7, width, 1, 7, 1, Same);
        let b7 = cb(&mut b, b7, 192, 7, 1, 1, Same);
        let d = cb(&mut b, x, width, 1, 1, 1, Same);
        let d = cb(&mut b, d, width, 7, 1, 1, Same);
        let d = cb(&mut b, d, width, 1, 7, 1, Same);
        let d = cb(&mut b, d, width, 7, 1, 1, Same);
        let d = cb(&mut b, d, 192, 1, 7, 1, Same);
        let p = b.avg_pool(x, None, 3, 1, Same);
        let p = cb(&mut b, p, 192, 1, 1, 1, Same);
        x = b.concat(&[b1, b7, d, p], Some(&format!("mixed{}", 4 + i)));
    }

    let b3 = cb(&mut b, x, 192, 1, 1, 1, Same);
    let b3 = cb(&mut b, b3, 320, 3, 3, 2, Valid);
    let b7 = cb(&mut b, x, 192, 1, 1, 1, Same);
    let b7 = cb(&mut b, b7, 192, 1, 7, 1, Same);
    let b7 = cb(&mut b, b7, 192, 7, 1, 1, Same);
    let b7 = cb(&mut b, b7, 192, 3, 3, 2, Valid);
    let p = b.max_pool(x, None, 3, 2, Valid);
    x = b.concat(&[b3, b7, p], Some("mixed8"));

    for i in 0..2 {
        let b1 = cb(&mut b, x, 320, 1, 1, 1, Same);
        let b3 = cb(&mut b, x, 384, 1, 1, 1, Same);
        let b3a = cb(&mut b, b3, 384, 1, 3, 1, Same);
        let b3b = cb(&mut b, b3, 384, 3, 1, 1, Same);
        let b3 = b.concat(&[b3a, b3b], Some(&format!("mixed9_{i}")));
        let d = cb(&mut b, x, 448, 1, 1, 1, Same);
        let d = cb(&mut b, d, 384, 3, 3, 1, Same);
        let da = cb(&mut b, d, 384, 1, 3, 1, Same);
        let db = cb(&mut b, d, 384, 3, 1, 1, Same);
        let d = b.concat(&[da, db], None);
        let p = b.avg_pool(x, None, 3, 1, Same);
        let p = cb(&mut b, p, 192, 1, 1, 1, Same);
        x = b.concat(&[b1, b3, d, p], Some(&format!("mixed{}", 9 + i)));
    }
    b.finish(x)
}

#[derive(Clone, Copy)]
enum ResBlock {
    B35,
    B17,
    B8,
}

fn resnet_block(b: &mut GraphBuilder, x: usize, scale: f64, kind: ResBlock, idx: usize, activate: bool) -> usize {
    use Padding::Same;
    let cb = |b: &mut GraphBuilder, x, f, k: (usize, usize)| conv_bn(b, x, f, k, 1, Same, None);
    let (prefix, branches) = match kind {
        ResBlock::B35 => {
            let b0 = cb(b, x, 32, (1, 1));
            let b1 = cb(b, x, 32, (1, 1));
            let b1 = cb(b, b1, 32, (3, 3));
            let b2 = cb(b, x, 32, (1, 1));
            let b2 = cb(b, b2, 48, (3, 3));
            let b2 = cb(b, b2, 64, (3, 3));
            ("block35", vec![b0, b1, b2])
        }
        ResBlock::B17 => {
            let b0 = cb(b, x, 192, (1, 1));
            let b1 = cb(b, x, 128, (1, 1));
            let b1 = cb(b, b1, 160, (1, 7));
            let b1 = cb(b, b1, 192, (7, 1));
            ("block17", vec![b0, b1])
        }
        ResBlock::B8 => {
            let b0 = cb(b, x, 192, (1, 1));
            let b1 = cb(b, x, 192, (1, 1));
            let b1 = cb(b, b1, 224, (1, 3));
            let b1 = cb(b, b1, 256, (3, 1));
            ("block8", vec![b0, b1])
        }
    };
    let name = format!("{prefix}_{idx}");
    let mixed = b.concat(&branches, Some(&format!("{name}_mixed")));
    let channels = b.shape_of(x).2;
    let up = b.conv(
        mixed,
        Some(&format!("{name}_conv")),
        channels,
        (1, 1),
        1,
        Same,
        true,
        false,
    );
    let y = b.scale_add(x, up, scale, None);
    if activate {
        b.relu(y, Some(&format!("{name}_ac")))
    } else {
        y
    }
}

fn inception_resnet_v2() -> Graph {
    use Padding::{Same, Valid};
    let mut b = GraphBuilder::new("inceptionresnetv2");
    let cb = |b: &mut GraphBuilder, x, f, k, s, p| conv_bn(b, x, f, (k, k), s, p, None);
    let x = b.input(STANDARD_SIDE, CHANNELS);
    let x = cb(&mut b, x, 32, 3, 2, Valid);
    let x = cb(&mut b, x, 32, 3, 1, Valid);
    let x = cb(&mut b, x, 64, 3, 1, Same);
    let x = b.max_pool(x, None, 3, 2, Valid);
    let x = cb(&mut b, x, 80, 1, 1, Valid);
    let x = cb(&mut b, x, 192, 3, 1, Valid);
    let x = b.max_pool(x, None, 3, 2, Valid);

    let b0 = cb(&mut b, x, 96, 1, 1, Same);
    let b1 = cb(&mut b, x, 48, 1, 1, Same);
    let b1 = cb(&mut b, b1, 64, 5, 1, Same);
    let b2 = cb(&mut b, x, 64, 1, 1, Same);
    let b2 = cb(&mut b, b2, 96, 3, 1, Same);
    let b2 = cb(&mut b, b2, 96, 3, 1, Same);
    let p = b.avg_pool(x, None, 3, 1, Same);
    let p = cb(&mut b, p, 64, 1, 1, Same);
    let mut x = b.concat(&[b0, b1, b2, p], Some("mixed_5b"));

    for idx in 1..=10 {
        x = resnet_block(&mut b, x, 0.17, ResBlock::B35, idx, true);
    }

    let b0 = cb(&mut b, x, 384, 3, 2, Valid);
    let b1 = cb(&mut b, x, 256, 1, 1, Same);
    let b1 = cb(&mut b, b1, 256, 3, 1, Same);
    let b1 = cb(&mut b, b1, 384, 3, 2, Valid);
    let p = b.max_pool(x, None, 3, 2, Valid);
    x = b.concat(&[b0, b1, p], Some("mixed_6a"));

    for idx in 1..=20 {
        x = resnet_block(&mut b, x, 0.1, ResBlock::B17, idx, true);
    }

    let b0 = cb(&mut b, x, 256, 1, 1, Same);
    let b0 = cb(&mut b, b0, 384, 3, 2, Valid);
    let b1 = cb(&mut b, x, 256, 1, 1, Same);
    let b1 = cb(&mut b, b1, 288, 3, 2, Valid);
    let b2 = cb(&mut b, x, 256, 1, 1, Same);
    let b2 = cb(&mut b, b2, 288, 3, 1, Same);
    let b2 = cb(&mut b, b2, 320, 3, 2, Valid);
    let p = b.max_pool(x, None, 3, 2, Valid);
    x = b.concat(&[b0, b1, b2, p], Some("mixed_7a"));

    for idx in 1..=9 {
        x = resnet_block(&mut b, x, 0.2, ResBlock::B8, idx, true);
    }
    x = resnet_block(&mut b, x, 1.0, ResBlock::B8, 10, false);
    let x = conv_bn(&mut b, x, 1536, (1, 1), 1, Same, Some("conv_7b"));
    b.finish(x)
}

/// Eight layers: input, strided conv, pool, conv, batch norm, relu, pool,
/// strided conv. Output is 14×14×32.
fn surrogate() -> Graph {
    let mut b = GraphBuilder::new("surrogate");
    let x = b.input(STANDARD_SIDE, CHANNELS);
    let x = b.conv(x, Some("conv1"), 8, (3, 3), 2, Padding::Same, true, true);
    let x = b.max_pool(x, Some("pool1"), 2, 2, Padding::Valid);
    let x = b.conv(x, Some("conv2"), 16, (3, 3), 1, Padding::Same, false, false);
    let x = b.batch_norm(x, Some("bn2"), true);
    let x = b.relu(x, Some("act2"));
    let x = b.max_pool(x, Some("pool2"), 2, 2, Padding::Valid);
    let x = b.conv(x, Some("conv3"), 32, (3, 3), 2, Padding::Same, true, true);
    b.finish(x)
}
