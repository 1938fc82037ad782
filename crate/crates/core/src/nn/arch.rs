//! Convolution-stack descriptions shared by the angular and spatial networks:
//! a list of `conv + ReLU` blocks followed by one dense output layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::network::{LayerSpec, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub filters: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub convs: Vec<ConvLayer>,
}

impl Default for NetworkConfig {
    /// 64 filters of 3x3, then 32 filters of 1x1.
    fn default() -> Self {
        Self::from_pairs(&[(64, 3), (32, 1)])
    }
}

impl NetworkConfig {
    pub fn from_pairs(pairs: &[(usize, usize)]) -> Self {
        Self {
            convs: pairs
                .iter()
                .map(|&(filters, kernel)| ConvLayer { filters, kernel })
                .collect(),
        }
    }

    /// Default stack with the second convolution's kernel replaced.
    pub fn with_second_kernel(k2: usize) -> Self {
        Self::from_pairs(&[(64, 3), (32, k2)])
    }

    /// Second-layer kernel sweep: `k2` in {1, 3, 5}.
    pub fn filter_size_variants() -> Vec<(String, Self)> {
        [1, 3, 5]
            .into_iter()
            .map(|k| (format!("k2={k}"), Self::with_second_kernel(k)))
            .collect()
    }

    /// Depth / width sweep: the three-layer baseline and four deeper stacks.
    pub fn depth_variants() -> Vec<(String, Self)> {
        [
            ("3-layer 64-32", vec![(64, 3), (32, 1)]),
            ("4-layer 64-32-32", vec![(64, 3), (32, 1), (32, 1)]),
            ("4-layer 64-16-16", vec![(64, 3), (16, 1), (16, 1)]),
            ("4-layer 64-32-16", vec![(64, 3), (32, 1), (16, 1)]),
            ("5-layer 64-16-16-16", vec![(64, 3), (16, 1), (16, 1), (16, 1)]),
        ]
        .into_iter()
        .map(|(name, pairs)| (name.to_string(), Self::from_pairs(&pairs)))
        .collect()
    }

    /// Layer list for a `channels x side x side` input and `outputs` dense units.
    pub fn layer_specs(&self, channels: usize, side: usize, outputs: usize) -> Result<Vec<LayerSpec>> {
        let mut specs = Vec::with_capacity(2 * self.convs.len() + 1);
        let (mut c, mut s) = (channels, side);
        for (i, conv) in self.convs.iter().enumerate() {
            if conv.filters == 0 {
                return Err(Error::Config(format!("conv layer {i} has zero filters")));
            }
            if conv.kernel == 0 || conv.kernel % 2 == 0 {
                return Err(Error::Config(format!(
                    "conv layer {i}: kernel {} must be odd",
                    conv.kernel
                )));
            }
            if conv.kernel > s {
                return Err(Error::Config(format!(
                    "conv layer {i}: {k}x{k} kernel does not fit the {s}x{s} input it receives \
                     (input side {side}, valid convolution shrinks by k-1 per layer)",
                    k = conv.kernel
                )));
            }
            specs.push(LayerSpec::Conv {
                in_channels: c,
                out_channels: conv.filters,
                kernel: conv.kernel,
            });
            specs.push(LayerSpec::Relu);
            c = conv.filters;
            s = s - conv.kernel + 1;
        }
        specs.push(LayerSpec::FullyConnected {
            in_size: c * s * s,
            out_size: outputs,
        });
        Ok(specs)
    }

    pub fn build(
        &self,
        channels: usize,
        side: usize,
        outputs: usize,
        seed: u64,
        init_std: f64,
    ) -> Result<Network> {
        let specs = self.layer_specs(channels, side, outputs)?;
        Network::new((channels, side, side), specs, seed, init_std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_have_expected_counts() {
        assert_eq!(NetworkConfig::filter_size_variants().len(), 3);
        let depth = NetworkConfig::depth_variants();
        assert_eq!(depth.len(), 5);
        assert_eq!(depth[4].1.convs.len(), 4);
    }

    #[test]
    fn infeasible_kernel_explained() {
        let cfg = NetworkConfig::from_pairs(&[(8, 3), (8, 5)]);
        let err = cfg.layer_specs(1, 5, 3).unwrap_err().to_string();
        assert!(err.contains("does not fit"), "{err}");
        assert!(NetworkConfig::from_pairs(&[(8, 2)]).layer_specs(1, 5, 3).is_err());
    }
}
