use serde::{Deserialize, Serialize};

use super::stage::{ranges, Stage, StageTrace};
use super::{check_input, LayerSpec, Model};
use crate::conv::ConvPoint;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{Affine, Dropout, DropoutMask};
use crate::tensor::{Parameter, Parameterized, Tensor};
use crate::Rng;

/// Kernel size used by the segmentation ladders.
pub const SEGMENTATION_KERNEL_SIZE: usize = 16;

/// Encoder/decoder ladder of a segmentation network.
///
/// With `L` encoder and `D` decoder layers, decoder layer `j` convolves the
/// features at encoder level `L-j` onto the positions of level `L-1-j`
/// (level 0 is the input). Its input is the encoder output `f_L` for
/// `j = 0` and `[d_{j-1}, f_{L-j}]` otherwise. When `D < L` the last
/// decoder output is concatenated with `f_{L-D}` before the point-wise
/// linear layer; all levels up to `L-D` must then keep every input point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationConfig {
    pub num_classes: usize,
    pub input_features: usize,
    pub dim: usize,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_dropout() -> f64 {
    0.5
}

impl SegmentationConfig {
    /// conv2..conv6 and deconv5..deconv1; deconv1 maps back onto the input.
    pub fn small(num_classes: usize, input_features: usize, dim: usize) -> Self {
        let k = SEGMENTATION_KERNEL_SIZE;
        Self {
            num_classes,
            input_features,
            dim,
            encoder: vec![
                LayerSpec::new(64, Some(1024), k, 16),
                LayerSpec::new(64, Some(256), k, 16),
                LayerSpec::new(128, Some(64), k, 8),
                LayerSpec::new(128, Some(16), k, 8),
                LayerSpec::new(128, Some(8), k, 4),
            ],
            decoder: vec![
                LayerSpec::new(128, Some(16), k, 4),
                LayerSpec::new(128, Some(64), k, 4),
                LayerSpec::new(64, Some(256), k, 4),
                LayerSpec::new(64, Some(1024), k, 4),
                LayerSpec::new(64, None, k, 8),
            ],
            dropout: default_dropout(),
        }
    }

    /// The small ladder plus conv0 (every input point), conv1 (2048 points)
    /// and deconv0.
    pub fn large(num_classes: usize, input_features: usize, dim: usize) -> Self {
        let k = SEGMENTATION_KERNEL_SIZE;
        let mut c = Self::small(num_classes, input_features, dim);
        c.encoder.insert(0, LayerSpec::new(64, Some(2048), k, 16));
        c.encoder.insert(0, LayerSpec::new(64, None, k, 16));
        c.decoder[4] = LayerSpec::new(64, Some(2048), k, 8);
        c.decoder.push(LayerSpec::new(64, None, k, 8));
        c
    }

    /// Three-level ladder with narrow layers and small kernels, cheap enough
    /// to train on a single core within minutes.
    pub fn desk(num_classes: usize, input_features: usize, dim: usize) -> Self {
        Self {
            num_classes,
            input_features,
            dim,
            encoder: vec![
                LayerSpec::new(16, Some(256), 8, 16),
                LayerSpec::new(32, Some(64), 8, 16),
                LayerSpec::new(32, Some(16), 8, 8),
            ],
            decoder: vec![
                LayerSpec::new(32, Some(64), 8, 4),
                LayerSpec::new(16, Some(256), 8, 4),
                LayerSpec::new(16, None, 8, 4),
            ],
            dropout: default_dropout(),
        }
    }

    /// Channel width of encoder level `l` (level 0 is the input).
    fn encoder_width(&self, l: usize) -> usize {
        if l == 0 {
            self.input_features
        } else {
            self.encoder[l - 1].channels
        }
    }

    /// Width of the features fed to the point-wise linear layer.
    pub fn head_width(&self) -> usize {
        let (l, d) = (self.encoder.len(), self.decoder.len());
        let last = self.decoder.last().map_or(self.encoder_width(l), |s| s.channels);
        if l > d {
            last + self.encoder_width(l - d)
        } else {
            last
        }
    }

    /// Largest fixed encoder output count; inputs must have at least this
    /// many points.
    pub fn required_points(&self) -> usize {
        self.encoder.iter().filter_map(|s| s.points).max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.input_features == 0 || self.dim == 0 {
            return Err(Error::Parameter("segmentation dimensions must be positive".into()));
        }
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return Err(Error::Parameter("segmentation net needs encoder and decoder layers".into()));
        }
        if self.decoder.len() > self.encoder.len() {
            return Err(Error::Parameter(format!(
                "{} decoder layers for {} encoder layers",
                self.decoder.len(),
                self.encoder.len()
            )));
        }
        for l in self.encoder.iter().chain(&self.decoder) {
            l.validate()?;
        }
        let skip = self.encoder.len() - self.decoder.len();
        if self.encoder[..skip].iter().any(|s| s.points.is_some()) {
            return Err(Error::Parameter(
                "encoder levels below the decoder's last target must keep every point".into(),
            ));
        }
        Dropout::new(self.dropout)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationNet {
    config: SegmentationConfig,
    encoder: Vec<Stage>,
    decoder: Vec<Stage>,
    fc: Affine,
    dropout: Dropout,
}

pub struct SegmentationTrace {
    /// Output positions of every encoder level, input first.
    pub positions: Vec<Tensor>,
    /// Output positions of every decoder layer.
    pub decoder_positions: Vec<Tensor>,
    encoder: Vec<StageTrace>,
    decoder: Vec<StageTrace>,
    /// Features entering dropout and the point-wise linear layer.
    pub head_input: Tensor,
    dropped: Tensor,
    mask: DropoutMask,
}

impl SegmentationNet {
    pub fn new(config: SegmentationConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (l_count, d) = (config.encoder.len(), config.dim);
        let mut encoder = Vec::with_capacity(l_count);
        for (l, spec) in config.encoder.iter().enumerate() {
            encoder.push(Stage::new(config.encoder_width(l), spec, d, rng)?);
        }
        let mut decoder = Vec::with_capacity(config.decoder.len());
        for (j, spec) in config.decoder.iter().enumerate() {
            let width = if j == 0 {
                config.encoder_width(l_count)
            } else {
                config.decoder[j - 1].channels + config.encoder_width(l_count - j)
            };
            decoder.push(Stage::new(width, spec, d, rng)?);
        }
        let fc = Affine::new(config.head_width(), config.num_classes, rng);
        let dropout = Dropout::new(config.dropout)?;
        Ok(Self {
            config,
            encoder,
            decoder,
            fc,
            dropout,
        })
    }

    pub fn config(&self) -> &SegmentationConfig {
        &self.config
    }

    pub fn encoder(&self) -> &[Stage] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[Stage] {
        &self.decoder
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvPoint> {
        self.encoder.iter().chain(&self.decoder).map(|s| &s.conv)
    }

    pub fn head(&self) -> &Affine {
        &self.fc
    }

    pub fn head_mut(&mut self) -> &mut Affine {
        &mut self.fc
    }

    /// Backward pass with an optional extra gradient on the head input
    /// features (used by fusion).
    pub fn backward_with_head(
        &self,
        trace: &SegmentationTrace,
        upstream: &Tensor,
        head_upstream: Option<&Tensor>,
        grads: &mut [Tensor],
    ) -> Result<()> {
        let (l_count, d_count) = (self.encoder.len(), self.decoder.len());
        let enc_ranges = ranges(&self.encoder, 0);
        let dec_ranges = ranges(&self.decoder, enc_ranges.last().map_or(0, |r| r.end));
        let fc_at = dec_ranges.last().map_or(0, |r| r.end);
        if grads.len() != fc_at + 2 {
            return Err(Error::Dimension(format!("{} gradient buffers for the segmenter", grads.len())));
        }
        let d = self.fc.backward(&trace.dropped, upstream, &mut grads[fc_at..])?;
        let mut d_head = self.dropout.backward(&trace.mask, &d);
        if let Some(extra) = head_upstream {
            d_head.add_assign(extra)?;
        }

        // gradients of encoder level outputs f_1..f_L
        let mut d_enc: Vec<Option<Tensor>> = vec![None; l_count + 1];
        let add = |slot: &mut Option<Tensor>, g: Tensor| -> Result<()> {
            match slot {
                Some(t) => t.add_assign(&g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        };
        let skip = l_count - d_count;
        let last_width = self.config.decoder[d_count - 1].channels;
        let mut d_dec = if skip >= 1 {
            let mut parts = d_head.split_cols(&[last_width, self.config.encoder_width(skip)])?;
            add(&mut d_enc[skip], parts.pop().expect("two parts"))?;
            parts.pop().expect("two parts")
        } else {
            d_head
        };

        for j in (0..d_count).rev() {
            let d_in = self.decoder[j].backward(&trace.decoder[j], &d_dec, &mut grads[dec_ranges[j].clone()])?;
            if j == 0 {
                add(&mut d_enc[l_count], d_in)?;
            } else {
                let mut parts = d_in.split_cols(&[
                    self.config.decoder[j - 1].channels,
                    self.config.encoder_width(l_count - j),
                ])?;
                add(&mut d_enc[l_count - j], parts.pop().expect("two parts"))?;
                d_dec = parts.pop().expect("two parts");
            }
        }

        for l in (1..=l_count).rev() {
            let Some(g) = d_enc[l].take() else { continue };
            let d_in = self.encoder[l - 1].backward(&trace.encoder[l - 1], &g, &mut grads[enc_ranges[l - 1].clone()])?;
            if l > 1 {
                add(&mut d_enc[l - 1], d_in)?;
            }
        }
        Ok(())
    }
}

impl Parameterized for SegmentationNet {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = self
            .encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|c| c.parameters())
            .collect();
        v.extend(self.fc.parameters());
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = self
            .encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|c| c.parameters_mut())
            .collect();
        v.extend(self.fc.parameters_mut());
        v
    }
}

impl Model for SegmentationNet {
    type Trace = SegmentationTrace;

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn input_features(&self) -> usize {
        self.config.input_features
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn forward(&self, cloud: &PointCloud, rng: &mut Rng, training: bool) -> Result<(Tensor, SegmentationTrace)> {
        check_input(cloud, self.config.dim, self.config.input_features)?;
        let needed = self.config.required_points();
        if cloud.len() < needed {
            return Err(Error::InputSize(format!(
                "segmentation needs at least {needed} input points, got {}",
                cloud.len()
            )));
        }
        let (l_count, d_count) = (self.encoder.len(), self.decoder.len());
        let mut positions = vec![cloud.positions().clone()];
        let mut features = vec![cloud.features().clone()];
        let mut enc_traces = Vec::with_capacity(l_count);
        for (l, (stage, spec)) in self.encoder.iter().zip(&self.config.encoder).enumerate() {
            let (out, trace) = stage.forward(spec, &positions[l], &features[l], None, rng)?;
            positions.push(out.positions);
            features.push(out.features);
            enc_traces.push(trace);
        }

        let mut dec_traces = Vec::with_capacity(d_count);
        let mut decoder_positions = Vec::with_capacity(d_count);
        let mut current = features[l_count].clone();
        for (j, (stage, spec)) in self.decoder.iter().zip(&self.config.decoder).enumerate() {
            let source = l_count - j;
            let input = if j == 0 {
                current
            } else {
                Tensor::concat_cols(&[&current, &features[source]])?
            };
            let target = &positions[source - 1];
            let (out, trace) = stage.forward(spec, &positions[source], &input, Some(target), rng)?;
            decoder_positions.push(out.positions);
            current = out.features;
            dec_traces.push(trace);
        }

        let skip = l_count - d_count;
        let head_input = if skip >= 1 {
            Tensor::concat_cols(&[&current, &features[skip]])?
        } else {
            current
        };
        let (dropped, mask) = self.dropout.forward(&head_input, training, rng);
        let logits = self.fc.forward(&dropped)?;
        Ok((
            logits,
            SegmentationTrace {
                positions,
                decoder_positions,
                encoder: enc_traces,
                decoder: dec_traces,
                head_input,
                dropped,
                mask,
            },
        ))
    }

    fn backward(&self, trace: &SegmentationTrace, upstream: &Tensor, grads: &mut [Tensor]) -> Result<()> {
        self.backward_with_head(trace, upstream, None, grads)
    }

    fn stages_mut(&mut self) -> Vec<&mut Stage> {
        self.encoder.iter_mut().chain(&mut self.decoder).collect()
    }

    fn stage_outputs<'a>(&self, trace: &'a SegmentationTrace) -> Vec<&'a Tensor> {
        trace
            .encoder
            .iter()
            .chain(&trace.decoder)
            .map(StageTrace::pre_activation)
            .collect()
    }
}
