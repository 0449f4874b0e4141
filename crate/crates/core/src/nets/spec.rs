use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One layer of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Conv { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Relu,
    Flatten,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv { .. })
    }

    /// `(weight shape, bias shape)`; empty for parameterless layers.
    pub fn param_shapes(&self) -> (Vec<usize>, Vec<usize>) {
        match *self {
            LayerSpec::Dense { inputs, outputs } => (vec![outputs, inputs], vec![outputs]),
            LayerSpec::Conv { in_channels, out_channels, kernel, .. } => {
                (vec![out_channels, in_channels, kernel, kernel], vec![out_channels])
            }
            LayerSpec::Relu | LayerSpec::Flatten => (vec![0], vec![0]),
        }
    }

    pub(crate) fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv { in_channels, kernel, .. } => in_channels * kernel * kernel,
            LayerSpec::Relu | LayerSpec::Flatten => 0,
        }
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(Error::Spec(format!(
                        "dense layer expects input [{inputs}], got {input:?}"
                    )));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv { in_channels, out_channels, kernel, stride, padding } => {
                let [c, h, w] = input else {
                    return Err(Error::Spec(format!("conv layer expects [c, h, w], got {input:?}")));
                };
                if *c != in_channels {
                    return Err(Error::Spec(format!(
                        "conv layer expects {in_channels} channels, got {c}"
                    )));
                }
                if kernel == 0 || stride == 0 {
                    return Err(Error::Spec("conv kernel and stride must be positive".into()));
                }
                let out = |n: usize| {
                    let padded = n + 2 * padding;
                    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
                };
                match (out(*h), out(*w)) {
                    (Some(ho), Some(wo)) => Ok(vec![out_channels, ho, wo]),
                    _ => Err(Error::Spec(format!("conv kernel {kernel} larger than padded input {input:?}"))),
                }
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// Architecture of a network: input shape, layer stack and class count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, classes: usize) -> Result<Self> {
        let spec = NetworkSpec { input_shape, layers, classes };
        spec.validate()?;
        Ok(spec)
    }

    /// Dense ReLU network `input -> hidden... -> classes`.
    pub fn mlp(inputs: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = inputs;
        for &h in hidden {
            layers.push(LayerSpec::Dense { inputs: width, outputs: h });
            layers.push(LayerSpec::Relu);
            width = h;
        }
        layers.push(LayerSpec::Dense { inputs: width, outputs: classes });
        NetworkSpec::new(vec![inputs], layers, classes)
    }

    /// Small image network: `conv(c0)-relu-conv(c1)-relu-...-flatten-dense`,
    /// each conv 3x3 with stride 2 and padding 1.
    pub fn conv(input_shape: [usize; 3], channels: &[usize], classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        let mut shape = input_shape.to_vec();
        for &c in channels {
            let layer = LayerSpec::Conv {
                in_channels: shape[0],
                out_channels: c,
                kernel: 3,
                stride: 2,
                padding: 1,
            };
            shape = layer.output_shape(&shape)?;
            layers.push(layer);
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Flatten);
        let flat: usize = shape.iter().product();
        layers.push(LayerSpec::Dense { inputs: flat, outputs: classes });
        NetworkSpec::new(input_shape.to_vec(), layers, classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Spec(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Spec(format!("bad input shape {:?}", self.input_shape)));
        }
        let out = self.shapes()?.pop().unwrap_or_default();
        if out != [self.classes] {
            return Err(Error::Spec(format!(
                "final output shape {out:?} does not match {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    /// Activation shapes: element 0 is the input, element `i+1` the output of layer `i`.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Stable 64-bit fingerprint of the architecture.
    pub fn fingerprint(&self) -> u64 {
        let canonical = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&canonical);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Which part a network plays in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Student,
    CleanTeacher,
    RobustTeacher,
}

impl Role {
    pub fn tag(self) -> u8 {
        match self {
            Role::Student => 0,
            Role::CleanTeacher => 1,
            Role::RobustTeacher => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Role> {
        match tag {
            0 => Some(Role::Student),
            1 => Some(Role::CleanTeacher),
            2 => Some(Role::RobustTeacher),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Student => "student",
            Role::CleanTeacher => "clean-teacher",
            Role::RobustTeacher => "robust-teacher",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_shapes() {
        let s = NetworkSpec::mlp(2, &[32, 32], 3).unwrap();
        let shapes = s.shapes().unwrap();
        assert_eq!(shapes.last().unwrap(), &vec![3]);
        assert_eq!(s.layers.len(), 5);
    }

    #[test]
    fn conv_shapes() {
        let s = NetworkSpec::conv([1, 28, 28], &[8, 16], 10).unwrap();
        let shapes = s.shapes().unwrap();
        assert_eq!(shapes[1], vec![8, 14, 14]);
        assert_eq!(shapes[3], vec![16, 7, 7]);
        assert_eq!(shapes.last().unwrap(), &vec![10]);
    }

    #[test]
    fn incompatible_layers_rejected() {
        let bad = NetworkSpec::new(
            vec![2],
            vec![LayerSpec::Dense { inputs: 3, outputs: 2 }],
            2,
        );
        assert!(matches!(bad, Err(Error::Spec(_))));
        let wrong_classes =
            NetworkSpec::new(vec![2], vec![LayerSpec::Dense { inputs: 2, outputs: 4 }], 3);
        assert!(wrong_classes.is_err());
    }

    #[test]
    fn fingerprint_distinguishes_specs() {
        let a = NetworkSpec::mlp(2, &[32, 32], 2).unwrap();
        let b = NetworkSpec::mlp(2, &[32, 16], 2).unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
