use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::LayerKind;

/// One row of a layer table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDef {
    pub name: String,
    pub kind: LayerKind,
    /// 1-based joint-layer number when this row is a joint layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<usize>,
    /// Applied to the target branch only (the detector's first pool).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub target_only: bool,
}

impl LayerDef {
    fn conv(name: &str, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerDef {
            name: name.to_string(),
            kind: LayerKind::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            },
            joint: None,
            target_only: false,
        }
    }

    fn same_conv(name: &str, out_channels: usize, kernel: usize) -> Self {
        Self::conv(name, out_channels, kernel, 1, kernel / 2)
    }

    fn joint(mut self, number: usize) -> Self {
        self.joint = Some(number);
        self
    }

    fn pool(name: &str, kernel: usize, stride: usize) -> Self {
        LayerDef {
            name: name.to_string(),
            kind: LayerKind::MaxPool2d { kernel, stride },
            joint: None,
            target_only: false,
        }
    }

    fn linear(name: &str, out_features: usize) -> Self {
        LayerDef {
            name: name.to_string(),
            kind: LayerKind::Linear { out_features },
            joint: None,
            target_only: false,
        }
    }
}

/// What the network emits after its last layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Sigmoid over the last layer: a match probability.
    Sigmoid,
    /// Raw last-layer output (detector predictions before decoding).
    Raw,
}

/// Declarative twin-branch network: a layer table plus input geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerDef>,
    pub in_channels: usize,
    pub query_size: usize,
    pub target_size: usize,
    /// Leaky ReLU slope after every conv, joint and linear layer except the last.
    pub activation_slope: f64,
    pub head: Head,
}

impl NetworkSpec {
    pub fn joint_count(&self) -> usize {
        self.layers.iter().filter(|l| l.joint.is_some()).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    #[default]
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!(
                "unknown preset '{other}', expected paper or desk"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

/// On/off flags for the joint layers of a network, JL1 first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointPlacementMask(Vec<bool>);

impl JointPlacementMask {
    pub fn new(enabled: Vec<bool>) -> Self {
        JointPlacementMask(enabled)
    }

    pub fn all(count: usize) -> Self {
        JointPlacementMask(vec![true; count])
    }

    /// Builds a mask of `count` flags with the given 1-based layers enabled.
    pub fn from_layers(count: usize, layers: &[usize]) -> Result<Self> {
        let mut flags = vec![false; count];
        for &l in layers {
            if l == 0 || l > count {
                return Err(Error::Config(format!(
                    "joint layer {l} outside 1..={count}"
                )));
            }
            flags[l - 1] = true;
        }
        Ok(JointPlacementMask(flags))
    }

    /// Best detector placement: JL1, JL2 and JL4.
    pub fn detector_default() -> Self {
        JointPlacementMask(vec![true, true, false, true, false])
    }

    /// The ten joint-layer combinations of the detector ablation table, in row order.
    pub fn ablation_rows() -> Vec<Self> {
        [
            &[1][..],
            &[1, 2],
            &[1, 2, 3],
            &[1, 2, 3, 4],
            &[1, 2, 3, 4, 5],
            &[1, 4],
            &[2, 4],
            &[3, 4],
            &[1, 2, 4],
            &[1, 3, 4],
        ]
        .iter()
        .map(|layers| Self::from_layers(5, layers).expect("static rows are valid"))
        .collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Whether 1-based joint layer `number` is on.
    pub fn is_enabled(&self, number: usize) -> bool {
        number >= 1 && self.0.get(number - 1).copied().unwrap_or(false)
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|&b| b)
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    pub fn enabled_layers(&self) -> Vec<usize> {
        (1..=self.0.len()).filter(|&n| self.is_enabled(n)).collect()
    }
}

impl fmt::Display for JointPlacementMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.enabled_layers().iter().map(|n| n.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for JointPlacementMask {
    type Err = Error;

    /// Parses a detector mask such as `"1,2,4"`.
    fn from_str(s: &str) -> Result<Self> {
        let layers = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad joint layer '{p}' in mask '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(5, &layers)
    }
}

/// Twin AlexNet with three joint layers, emitting a match probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognizerSpec {
    pub network: NetworkSpec,
}

impl RecognizerSpec {
    /// AlexNet channel widths divided by `width_div`, at `input` pixels per side.
    pub fn alexnet(input: usize, width_div: usize, slope: f64) -> Self {
        let c = |n: usize| (n / width_div).max(1);
        let layers = vec![
            LayerDef::conv("conv1", c(64), 11, 4, 2),
            LayerDef::pool("pool1", 3, 2),
            LayerDef::same_conv("joint1", c(64), 3).joint(1),
            LayerDef::same_conv("conv2", c(192), 5),
            LayerDef::pool("pool2", 3, 2),
            LayerDef::same_conv("joint2", c(192), 5).joint(2),
            LayerDef::same_conv("conv3", c(384), 3),
            LayerDef::same_conv("joint3", c(384), 3).joint(3),
            LayerDef::same_conv("conv4", c(256), 3),
            LayerDef::same_conv("conv5", c(256), 3),
            LayerDef::pool("pool5", 3, 2),
            LayerDef::linear("fc6", c(4096)),
            LayerDef::linear("fc7", c(4096)),
            LayerDef::linear("fc8", 1),
        ];
        RecognizerSpec {
            network: NetworkSpec {
                name: "jnn-alexnet".into(),
                layers,
                in_channels: 3,
                query_size: input,
                target_size: input,
                activation_slope: slope,
                head: Head::Sigmoid,
            },
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::alexnet(224, 1, 0.01),
            Preset::Desk => Self::alexnet(64, 4, 0.01),
        }
    }

    pub fn mask(&self) -> JointPlacementMask {
        JointPlacementMask::all(self.network.joint_count())
    }
}

/// Twin DarkNet19 with five joint-layer slots, emitting `B*5` maps over an
/// `S x S` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub network: NetworkSpec,
    pub mask: JointPlacementMask,
    pub grid: usize,
    pub anchors: usize,
}

impl DetectorSpec {
    /// DarkNet19 widths divided by `width_div`. `stem_stride` is the stride of
    /// the first convolution.
    pub fn darknet19(
        target_size: usize,
        query_size: usize,
        width_div: usize,
        stem_stride: usize,
        anchors: usize,
        mask: JointPlacementMask,
    ) -> Self {
        let c = |n: usize| (n / width_div).max(1);
        let mut pool1 = LayerDef::pool("pool1", 2, 2);
        pool1.target_only = true;
        let layers = vec![
            LayerDef::conv("conv1", c(32), 3, stem_stride, 1),
            pool1,
            LayerDef::same_conv("conv2", c(64), 3),
            LayerDef::same_conv("joint1", c(64), 3).joint(1),
            LayerDef::same_conv("conv3", c(128), 3),
            LayerDef::same_conv("conv4", c(64), 1),
            LayerDef::same_conv("conv5", c(128), 3),
            LayerDef::pool("pool2", 2, 2),
            LayerDef::same_conv("joint2", c(128), 3).joint(2),
            LayerDef::same_conv("conv6", c(256), 3),
            LayerDef::same_conv("conv7", c(128), 1),
            LayerDef::same_conv("conv8", c(256), 3),
            LayerDef::pool("pool3", 2, 2),
            LayerDef::same_conv("joint3", c(256), 3).joint(3),
            LayerDef::same_conv("conv9", c(512), 3),
            LayerDef::same_conv("conv10", c(256), 1),
            LayerDef::same_conv("conv11", c(512), 3),
            LayerDef::same_conv("conv12", c(256), 1),
            LayerDef::same_conv("conv13", c(512), 3),
            LayerDef::same_conv("joint4", c(512), 1).joint(4),
            LayerDef::same_conv("conv14", c(64), 1),
            LayerDef::pool("pool4", 2, 2),
            LayerDef::same_conv("conv15", c(1024), 3),
            LayerDef::same_conv("conv16", c(512), 1),
            LayerDef::same_conv("conv17", c(1024), 3),
            LayerDef::same_conv("conv18", c(512), 1),
            LayerDef::same_conv("conv19", c(1024), 3),
            LayerDef::same_conv("conv20", c(1024), 3),
            LayerDef::same_conv("conv21", c(1024), 3),
            LayerDef::same_conv("joint5", c(1024), 3).joint(5),
            LayerDef::same_conv("conv22", c(1024), 3),
            LayerDef::same_conv("conv23", anchors * 5, 1),
        ];
        // Four 2x2 pools plus the stem stride on the target side.
        let grid = target_size / (16 * stem_stride);
        DetectorSpec {
            network: NetworkSpec {
                name: "jnn-darknet19".into(),
                layers,
                in_channels: 3,
                query_size,
                target_size,
                activation_slope: 0.1,
                head: Head::Raw,
            },
            mask,
            grid,
            anchors,
        }
    }

    pub fn preset(preset: Preset, anchors: usize, mask: JointPlacementMask) -> Self {
        match preset {
            Preset::Paper => Self::darknet19(448, 224, 1, 2, anchors, mask),
            Preset::Desk => Self::darknet19(112, 56, 4, 1, anchors, mask),
        }
    }
}
