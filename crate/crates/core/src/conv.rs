//! The point convolution.
//!
//! For an output point `q` with neighborhood `X = {(p_j, x_j)}` the layer
//! computes, for every output channel `t`,
//!
//! ```text
//! y_t = β_t + 1/|X| · Σ_j Σ_i Σ_f w[i,f,t] · x_j[f] · φ_i({p̂_j − c})
//! ```
//!
//! where `p̂_j` are the neighborhood positions centered on `q` and scaled
//! into the unit ball, `c` are the learnable kernel element positions and
//! `φ` is a small MLP that maps the `|K|·d` relative coordinates of one
//! input point to `|K|` weights (one per kernel element). All output
//! channels share `c` and `φ`.
//!
//! Evaluation is batched over output points: the MLP runs once over all
//! `|Q|·k` (point, neighbor) rows, the features are distributed onto the
//! kernel (`z`), and a single matrix product maps `z` to the outputs.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::{normalize_to_unit_ball, sample_output_points, KdTree, NeighborIndices};
use crate::nn::{relu_backward_in_place, relu_in_place, Affine};
use crate::tensor::{gemm, Parameter, Parameterized, Tensor};
use crate::Rng;

/// Maps relative coordinates (`rows × |K|·d`) to kernel weights (`rows × |K|`).
pub trait WeightingFunction {
    fn evaluate(&self, relative: &Tensor) -> Result<Tensor>;
}

/// Kernel element positions `c` (`|K|×d`), feature weights `w`
/// (`|K|×n×C`) and bias `β` (`C`).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    pub positions: Parameter,
    pub weights: Parameter,
    pub bias: Parameter,
}

/// The learned weighting function: `|K|·d → 2|K| → |K| → |K|` with ReLU
/// after the first two layers.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightingNetwork {
    pub layers: [Affine; 3],
}

/// Hidden activations of one weighting-network evaluation.
#[derive(Clone, Debug)]
pub struct MlpCache {
    hidden1: Tensor,
    hidden2: Tensor,
}

impl WeightingNetwork {
    pub fn new(kernel_size: usize, dim: usize, rng: &mut Rng) -> Self {
        Self {
            layers: [
                Affine::new(kernel_size * dim, 2 * kernel_size, rng),
                Affine::new(2 * kernel_size, kernel_size, rng),
                Affine::new(kernel_size, kernel_size, rng),
            ],
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers[2].outputs()
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, MlpCache)> {
        let mut hidden1 = self.layers[0].forward(input)?;
        relu_in_place(&mut hidden1);
        let mut hidden2 = self.layers[1].forward(&hidden1)?;
        relu_in_place(&mut hidden2);
        let out = self.layers[2].forward(&hidden2)?;
        Ok((out, MlpCache { hidden1, hidden2 }))
    }

    /// Accumulates into `grads[0..6]` (W1, b1, W2, b2, W3, b3) and returns
    /// the gradient with respect to `input`.
    pub fn backward(
        &self,
        input: &Tensor,
        cache: &MlpCache,
        upstream: &Tensor,
        grads: &mut [Tensor],
    ) -> Result<Tensor> {
        let mut d2 = self.layers[2].backward(&cache.hidden2, upstream, &mut grads[4..6])?;
        relu_backward_in_place(&cache.hidden2, &mut d2);
        let mut d1 = self.layers[1].backward(&cache.hidden1, &d2, &mut grads[2..4])?;
        relu_backward_in_place(&cache.hidden1, &mut d1);
        self.layers[0].backward(input, &d1, &mut grads[0..2])
    }
}

impl WeightingFunction for WeightingNetwork {
    fn evaluate(&self, relative: &Tensor) -> Result<Tensor> {
        Ok(self.forward(relative)?.0)
    }
}

impl Parameterized for WeightingNetwork {
    fn parameters(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.parameters_mut())
            .collect()
    }
}

/// Evaluates `φ` for each input point independently.
///
/// `relative` holds `|X|×|K|×d` coordinates `p̂_j − c_i`; the result is
/// `|X|×|K|`.
pub fn phi_weights<W: WeightingFunction + ?Sized>(relative: &Tensor, weighting: &W) -> Result<Tensor> {
    let rows = relative.rows();
    let flat = relative.clone().reshape(&[rows, relative.cols()])?;
    weighting.evaluate(&flat)
}

/// Indicator weighting `φ_i = 1(p̂ = c_i)`: turns the operator back into a
/// discrete convolution when kernel and input coincide.
#[derive(Clone, Copy, Debug)]
pub struct IndicatorWeighting {
    pub kernel_size: usize,
    pub dim: usize,
}

impl WeightingFunction for IndicatorWeighting {
    fn evaluate(&self, relative: &Tensor) -> Result<Tensor> {
        let (k, d) = (self.kernel_size, self.dim);
        if relative.cols() != k * d {
            return Err(Error::Dimension(format!(
                "indicator expects {} columns, got {}",
                k * d,
                relative.cols()
            )));
        }
        let mut out = Tensor::zeros(&[relative.rows(), k]);
        for r in 0..relative.rows() {
            let row = relative.row(r);
            for i in 0..k {
                if row[i * d..(i + 1) * d].iter().all(|v| *v == 0.0) {
                    out.data_mut()[r * k + i] = 1.0;
                }
            }
        }
        Ok(out)
    }
}

/// Values kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache {
    mlp_input: Tensor,
    mlp: MlpCache,
    phi: Tensor,
    z: Tensor,
    neighbors: NeighborIndices,
}

impl ConvCache {
    pub fn neighbors(&self) -> &NeighborIndices {
        &self.neighbors
    }

    /// Kernel weights `φ` for every (output point, neighbor) row.
    pub fn phi(&self) -> &Tensor {
        &self.phi
    }
}

/// How a layer obtains its output points.
#[derive(Clone, Copy, Debug)]
pub enum OutputPoints<'a> {
    /// Every input point (`|Q| = |P|`).
    All,
    /// `m` points picked by the score-based sampler; all points when
    /// `m >= |P|`.
    Sample(usize),
    /// Explicit positions, e.g. from an encoder skip connection.
    Given(&'a Tensor),
}

/// Output positions `q` and features `y` of a layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerOutput {
    pub positions: Tensor,
    pub features: Tensor,
}

/// One convolution layer: kernel plus weighting network.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvPoint {
    pub kernel: ConvKernel,
    pub weighting: WeightingNetwork,
    dim: usize,
    in_channels: usize,
    out_channels: usize,
    kernel_size: usize,
}

/// Number of parameter tensors of a [`ConvPoint`].
pub const CONV_PARAMETER_COUNT: usize = 9;

fn sample_in_unit_ball(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            return v;
        }
    }
}

impl ConvPoint {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel_size == 0 || dim == 0 {
            return Err(Error::Parameter(format!(
                "conv layer sizes must be positive (n={in_channels}, C={out_channels}, |K|={kernel_size}, d={dim})"
            )));
        }
        let positions: Vec<f64> = (0..kernel_size)
            .flat_map(|_| sample_in_unit_ball(dim, rng))
            .collect();
        let bound = (6.0 / (kernel_size * in_channels + out_channels) as f64).sqrt();
        let weights: Vec<f64> = (0..kernel_size * in_channels * out_channels)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let weighting = WeightingNetwork::new(kernel_size, dim, rng);
        Ok(Self {
            kernel: ConvKernel {
                positions: Parameter::new(Tensor::new(&[kernel_size, dim], positions)?),
                weights: Parameter::new(Tensor::new(
                    &[kernel_size, in_channels, out_channels],
                    weights,
                )?),
                bias: Parameter::new(Tensor::zeros(&[out_channels])),
            },
            weighting,
            dim,
            in_channels,
            out_channels,
            kernel_size,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    /// `|Q|·k × |K|·d` matrix of normalised relative coordinates `p̂_j − c_i`.
    fn relative_coordinates(
        &self,
        positions: &Tensor,
        centers: &Tensor,
        neighbors: &NeighborIndices,
    ) -> Result<Tensor> {
        let (d, kk, k) = (self.dim, self.kernel_size, neighbors.k());
        if positions.cols() != d || centers.cols() != d {
            return Err(Error::Dimension(format!(
                "layer is {d}-d but points are {}-d and centers {}-d",
                positions.cols(),
                centers.cols()
            )));
        }
        if centers.rows() != neighbors.len() {
            return Err(Error::Dimension(format!(
                "{} centers with {} neighborhoods",
                centers.rows(),
                neighbors.len()
            )));
        }
        if let Some(max) = neighbors.max_index() {
            if max >= positions.rows() {
                return Err(Error::Index {
                    what: "neighbor",
                    index: max,
                    bound: positions.rows(),
                });
            }
        }
        let c = self.kernel.positions.value.data();
        let mut out = Tensor::zeros(&[centers.rows() * k, kk * d]);
        let mut gathered = vec![0.0; k * d];
        for q in 0..centers.rows() {
            for (j, &nb) in neighbors.row(q).iter().enumerate() {
                gathered[j * d..(j + 1) * d].copy_from_slice(positions.row(nb));
            }
            let normalized = normalize_to_unit_ball(&gathered, centers.row(q));
            for j in 0..k {
                let p = &normalized[j * d..(j + 1) * d];
                let row = out.row_mut(q * k + j);
                for i in 0..kk {
                    for a in 0..d {
                        row[i * d + a] = p[a] - c[i * d + a];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Distributes neighbor features onto the kernel elements:
    /// `z[q, i·n+f] = 1/k · Σ_j φ[(q,j), i] · x_j[f]`.
    fn distribute(&self, phi: &Tensor, features: &Tensor, neighbors: &NeighborIndices) -> Result<Tensor> {
        let (n, kk, k) = (self.in_channels, self.kernel_size, neighbors.k());
        if features.cols() != n {
            return Err(Error::Dimension(format!(
                "layer expects {n} input channels, got {}",
                features.cols()
            )));
        }
        let q_count = neighbors.len();
        let mut z = Tensor::zeros(&[q_count, kk * n]);
        let inv_k = 1.0 / k as f64;
        for q in 0..q_count {
            let zq = z.row_mut(q);
            for (j, &nb) in neighbors.row(q).iter().enumerate() {
                let x = features.row(nb);
                let phi_row = phi.row(q * k + j);
                for (i, &w) in phi_row.iter().enumerate() {
                    for (zv, xv) in zq[i * n..(i + 1) * n].iter_mut().zip(x) {
                        *zv += w * xv;
                    }
                }
            }
            zq.iter_mut().for_each(|v| *v *= inv_k);
        }
        Ok(z)
    }

    /// `y = β + z · w`.
    fn project(&self, z: &Tensor) -> Tensor {
        let (rows, kn, c) = (z.rows(), self.kernel_size * self.in_channels, self.out_channels);
        let mut y = Tensor::zeros(&[rows, c]);
        let bias = self.kernel.bias.value.data();
        for r in 0..rows {
            y.row_mut(r).copy_from_slice(bias);
        }
        gemm(
            rows,
            kn,
            c,
            1.0,
            z.data(),
            false,
            self.kernel.weights.value.data(),
            false,
            1.0,
            y.data_mut(),
        );
        y
    }

    /// Batched forward over `|Q|` neighborhoods. Returns `|Q|×C` outputs.
    pub fn forward(
        &self,
        positions: &Tensor,
        features: &Tensor,
        centers: &Tensor,
        neighbors: &NeighborIndices,
    ) -> Result<(Tensor, ConvCache)> {
        let mlp_input = self.relative_coordinates(positions, centers, neighbors)?;
        let (phi, mlp) = self.weighting.forward(&mlp_input)?;
        let z = self.distribute(&phi, features, neighbors)?;
        let y = self.project(&z);
        y.ensure_finite("convolution output")?;
        Ok((
            y,
            ConvCache {
                mlp_input,
                mlp,
                phi,
                z,
                neighbors: neighbors.clone(),
            },
        ))
    }

    /// Forward with an arbitrary weighting function in place of the MLP.
    pub fn forward_with<W: WeightingFunction + ?Sized>(
        &self,
        weighting: &W,
        positions: &Tensor,
        features: &Tensor,
        centers: &Tensor,
        neighbors: &NeighborIndices,
    ) -> Result<Tensor> {
        let relative = self.relative_coordinates(positions, centers, neighbors)?;
        let phi = weighting.evaluate(&relative)?;
        if phi.rows() != relative.rows() || phi.cols() != self.kernel_size {
            return Err(Error::Dimension(format!(
                "weighting returned {:?}, expected [{}, {}]",
                phi.shape(),
                relative.rows(),
                self.kernel_size
            )));
        }
        let z = self.distribute(&phi, features, neighbors)?;
        Ok(self.project(&z))
    }

    /// Convolution of a single neighborhood (`k×d` positions, `k×n`
    /// features) about `center`. Returns the `C` outputs.
    pub fn conv_forward(
        &self,
        positions: &Tensor,
        features: &Tensor,
        center: &[f64],
    ) -> Result<(Vec<f64>, ConvCache)> {
        let (centers, neighbors) = single_neighborhood(positions, center)?;
        let (y, cache) = self.forward(positions, features, &centers, &neighbors)?;
        Ok((y.into_data(), cache))
    }

    /// Reverse pass for [`ConvPoint::forward`].
    ///
    /// Accumulates parameter gradients into `grads` (ordered as
    /// [`Parameterized::parameters`]) and returns the gradient with respect to
    /// the input features (`|P|×n`).
    pub fn backward(
        &self,
        cache: &ConvCache,
        features: &Tensor,
        upstream: &Tensor,
        grads: &mut [Tensor],
    ) -> Result<Tensor> {
        let (n, kk, c, d) = (
            self.in_channels,
            self.kernel_size,
            self.out_channels,
            self.dim,
        );
        let neighbors = &cache.neighbors;
        let (q_count, k) = (neighbors.len(), neighbors.k());
        if upstream.rows() != q_count || upstream.cols() != c {
            return Err(Error::Dimension(format!(
                "upstream {:?} for {q_count} outputs of {c} channels",
                upstream.shape()
            )));
        }
        if grads.len() != CONV_PARAMETER_COUNT {
            return Err(Error::Dimension(format!(
                "{} gradient buffers for a conv layer",
                grads.len()
            )));
        }
        upstream.ensure_finite("convolution upstream gradient")?;

        // bias and feature weights
        {
            let gb = grads[2].data_mut();
            for r in 0..q_count {
                for (g, u) in gb.iter_mut().zip(upstream.row(r)) {
                    *g += u;
                }
            }
        }
        gemm(
            kk * n,
            q_count,
            c,
            1.0,
            cache.z.data(),
            true,
            upstream.data(),
            false,
            1.0,
            grads[1].data_mut(),
        );
        let mut dz = Tensor::zeros(&[q_count, kk * n]);
        gemm(
            q_count,
            c,
            kk * n,
            1.0,
            upstream.data(),
            false,
            self.kernel.weights.value.data(),
            true,
            0.0,
            dz.data_mut(),
        );

        // through the feature distribution
        let inv_k = 1.0 / k as f64;
        let mut dphi = Tensor::zeros(&[q_count * k, kk]);
        let mut dfeatures = Tensor::zeros(&[features.rows(), n]);
        for q in 0..q_count {
            let dzq = dz.row(q);
            for (j, &nb) in neighbors.row(q).iter().enumerate() {
                let row = q * k + j;
                let x = features.row(nb);
                let phi_row = cache.phi.row(row);
                let dphi_row = dphi.row_mut(row);
                for i in 0..kk {
                    let dzi = &dzq[i * n..(i + 1) * n];
                    dphi_row[i] = inv_k * dzi.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
                let dx = dfeatures.row_mut(nb);
                for (i, &w) in phi_row.iter().enumerate() {
                    let s = w * inv_k;
                    for (dv, g) in dx.iter_mut().zip(&dzq[i * n..(i + 1) * n]) {
                        *dv += s * g;
                    }
                }
            }
        }

        // through the weighting network to the kernel positions
        let drelative = self
            .weighting
            .backward(&cache.mlp_input, &cache.mlp, &dphi, &mut grads[3..9])?;
        let gc = grads[0].data_mut();
        for r in 0..drelative.rows() {
            for (g, v) in gc.iter_mut().zip(drelative.row(r)) {
                *g -= v;
            }
        }
        debug_assert_eq!(gc.len(), kk * d);
        Ok(dfeatures)
    }

    /// Runs the full layer: output point selection, k-NN neighborhoods on
    /// the input positions, and the convolution itself.
    pub fn apply(
        &self,
        positions: &Tensor,
        features: &Tensor,
        output: OutputPoints<'_>,
        k: usize,
        rng: &mut Rng,
    ) -> Result<(LayerOutput, ConvCache)> {
        if positions.rows() == 0 {
            return Err(Error::EmptyInput("layer input"));
        }
        if k == 0 {
            return Err(Error::Parameter("neighborhood size must be >= 1".into()));
        }
        let tree = KdTree::build(positions)?;
        let out_positions = match output {
            OutputPoints::All => positions.clone(),
            OutputPoints::Sample(m) if m >= positions.rows() => positions.clone(),
            OutputPoints::Sample(m) => {
                let picks = sample_output_points(&tree, m, k, rng);
                positions.gather_rows(&picks)
            }
            OutputPoints::Given(q) => q.clone(),
        };
        let neighbors = tree.knn_batch(&out_positions, k)?;
        let (y, cache) = self.forward(positions, features, &out_positions, &neighbors)?;
        Ok((
            LayerOutput {
                positions: out_positions,
                features: y,
            },
            cache,
        ))
    }
}

impl Parameterized for ConvPoint {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut v = vec![&self.kernel.positions, &self.kernel.weights, &self.kernel.bias];
        v.extend(self.weighting.parameters());
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = vec![
            &mut self.kernel.positions,
            &mut self.kernel.weights,
            &mut self.kernel.bias,
        ];
        v.extend(self.weighting.parameters_mut());
        v
    }
}

fn single_neighborhood(positions: &Tensor, center: &[f64]) -> Result<(Tensor, NeighborIndices)> {
    let k = positions.rows();
    if k == 0 {
        return Err(Error::EmptyInput("neighborhood"));
    }
    let centers = Tensor::new(&[1, center.len()], center.to_vec())?;
    Ok((centers, NeighborIndices::new(k, (0..k).collect())?))
}

/// Discrete convolution `y = β + Σ_j Σ_i w_i · x_j · 1(c_i = p_j)` for scalar
/// features, with exact position matching.
pub fn discrete_conv_oracle(
    input_positions: &Tensor,
    input_features: &[f64],
    kernel_positions: &Tensor,
    kernel_weights: &[f64],
    bias: f64,
) -> f64 {
    let mut y = bias;
    for (j, x) in input_features.iter().enumerate() {
        for (i, w) in kernel_weights.iter().enumerate() {
            if input_positions.row(j) == kernel_positions.row(i) {
                y += w * x;
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::gradcheck::finite_diff_check;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct evaluation of the convolution sum with nested loops.
    fn naive_conv(layer: &ConvPoint, pos: &Tensor, feat: &Tensor, center: &[f64]) -> Vec<f64> {
        let (k, d) = (pos.rows(), layer.dim());
        let (kk, n, c) = (layer.kernel_size(), layer.in_channels(), layer.out_channels());
        let mut rel = vec![0.0; k * d];
        for j in 0..k {
            for a in 0..d {
                rel[j * d + a] = pos.row(j)[a] - center[a];
            }
        }
        let max = (0..k)
            .map(|j| rel[j * d..(j + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let cpos = layer.kernel.positions.value.data();
        let w = layer.kernel.weights.value.data();
        let mut y: Vec<f64> = layer.kernel.bias.value.data().to_vec();
        for j in 0..k {
            let mut input = Vec::new();
            for i in 0..kk {
                for a in 0..d {
                    let p = if max > 0.0 { rel[j * d + a] / max } else { 0.0 };
                    input.push(p - cpos[i * d + a]);
                }
            }
            let phi = layer.weighting.evaluate(&Tensor::new(&[1, kk * d], input).unwrap()).unwrap();
            for (t, yt) in y.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..kk {
                    for f in 0..n {
                        acc += w[(i * n + f) * c + t] * feat.row(j)[f] * phi.data()[i];
                    }
                }
                *yt += acc / k as f64;
            }
        }
        y
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = Rng::seed_from_u64(11);
        let layer = ConvPoint::new(2, 1, 3, 2, &mut rng).unwrap();
        let pos = random(&[4, 2], &mut rng);
        let feat = random(&[4, 2], &mut rng);
        let center = [0.1, -0.2];
        let (y, _) = layer.conv_forward(&pos, &feat, &center).unwrap();
        let expected = naive_conv(&layer, &pos, &feat, &center);
        assert!((y[0] - expected[0]).abs() <= 1e-12, "{y:?} vs {expected:?}");
    }

    #[test]
    fn zero_features_give_bias() {
        let mut rng = Rng::seed_from_u64(1);
        let mut layer = ConvPoint::new(3, 4, 5, 3, &mut rng).unwrap();
        layer.kernel.bias.value = random(&[4], &mut rng);
        let pos = random(&[6, 3], &mut rng);
        let (y, _) = layer
            .conv_forward(&pos, &Tensor::zeros(&[6, 3]), &[0.0, 0.0, 0.0])
            .unwrap();
        assert_eq!(y.as_slice(), layer.kernel.bias.value.data());
    }

    #[test]
    fn kernel_positions_start_in_unit_ball() {
        let layer = ConvPoint::new(1, 1, 64, 3, &mut Rng::seed_from_u64(4)).unwrap();
        for i in 0..64 {
            let r: f64 = layer.kernel.positions.value.row(i).iter().map(|v| v * v).sum();
            assert!(r <= 1.0);
        }
    }

    #[test]
    fn phi_is_row_wise() {
        let mut rng = Rng::seed_from_u64(3);
        let net = WeightingNetwork::new(4, 2, &mut rng);
        let row = random(&[1, 4, 2], &mut rng);
        let other = random(&[1, 4, 2], &mut rng);
        let stacked = Tensor::new(
            &[3, 4, 2],
            [row.data(), other.data(), row.data()].concat(),
        )
        .unwrap();
        let phi = phi_weights(&stacked, &net).unwrap();
        assert_eq!(phi.shape(), &[3, 4]);
        assert_eq!(phi.row(0), phi.row(2));
        let swapped = Tensor::new(
            &[3, 4, 2],
            [other.data(), row.data(), row.data()].concat(),
        )
        .unwrap();
        let phi2 = phi_weights(&swapped, &net).unwrap();
        assert_eq!(phi.row(0), phi2.row(1));
        assert_eq!(phi.row(1), phi2.row(0));
    }

    #[test]
    fn phi_matches_layer_by_layer_evaluation() {
        let mut rng = Rng::seed_from_u64(3);
        let net = WeightingNetwork::new(3, 2, &mut rng);
        let x = random(&[1, 6], &mut rng);
        let phi = phi_weights(&x, &net).unwrap();
        let mut h = x.clone();
        for (i, layer) in net.layers.iter().enumerate() {
            let w = layer.weight.value.data();
            let b = layer.bias.value.data();
            let (m, o) = (layer.inputs(), layer.outputs());
            let mut next = vec![0.0; o];
            for (j, out) in next.iter_mut().enumerate() {
                *out = b[j] + (0..m).map(|k| h.data()[k] * w[k * o + j]).sum::<f64>();
                if i < 2 {
                    *out = out.max(0.0);
                }
            }
            h = Tensor::new(&[1, o], next).unwrap();
        }
        assert!(phi.max_abs_diff(&h) <= 1e-12);
    }

    #[test]
    fn upstream_zero_gives_zero_gradients() {
        let mut rng = Rng::seed_from_u64(8);
        let layer = ConvPoint::new(2, 3, 4, 2, &mut rng).unwrap();
        let pos = random(&[5, 2], &mut rng);
        let feat = random(&[5, 2], &mut rng);
        let (_, cache) = layer.conv_forward(&pos, &feat, &[0.0, 0.0]).unwrap();
        let mut grads = layer.gradient_buffers();
        let dx = layer
            .backward(&cache, &feat, &Tensor::zeros(&[1, 3]), &mut grads)
            .unwrap();
        assert!(grads.iter().all(|g| g.data().iter().all(|v| *v == 0.0)));
        assert!(dx.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_features_give_zero_weight_gradient() {
        let mut rng = Rng::seed_from_u64(9);
        let layer = ConvPoint::new(2, 3, 4, 2, &mut rng).unwrap();
        let pos = random(&[5, 2], &mut rng);
        let feat = Tensor::zeros(&[5, 2]);
        let (_, cache) = layer.conv_forward(&pos, &feat, &[0.0, 0.0]).unwrap();
        let mut grads = layer.gradient_buffers();
        let up = Tensor::new(&[1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        layer.backward(&cache, &feat, &up, &mut grads).unwrap();
        assert!(grads[1].data().iter().all(|v| *v == 0.0));
        assert_eq!(grads[2].data(), up.data());
    }

    #[test]
    fn layer_gradient_matches_finite_differences() {
        let mut rng = Rng::seed_from_u64(21);
        let mut layer = ConvPoint::new(2, 3, 4, 3, &mut rng).unwrap();
        let pos = random(&[6, 3], &mut rng);
        let feat = random(&[6, 2], &mut rng);
        let center = [0.05, 0.1, -0.1];
        let probe = random(&[1, 3], &mut rng);
        let loss = |l: &ConvPoint| -> Result<f64> {
            let (y, _) = l.conv_forward(&pos, &feat, &center)?;
            Ok(y.iter().zip(probe.data()).map(|(a, b)| a * b).sum())
        };
        let (_, cache) = layer.conv_forward(&pos, &feat, &center).unwrap();
        let mut grads = layer.gradient_buffers();
        layer.backward(&cache, &feat, &probe, &mut grads).unwrap();
        let report = finite_diff_check(&mut layer, &grads, 1e-5, None, loss).unwrap();
        assert!(report.max() <= 1e-4, "{report:?}");
    }

    #[test]
    fn apply_shapes_and_regimes() {
        let mut rng = Rng::seed_from_u64(2);
        let layer = ConvPoint::new(1, 5, 4, 2, &mut rng).unwrap();
        let pos = random(&[64, 2], &mut rng);
        let feat = Tensor::filled(&[64, 1], 1.0);

        let (same, _) = layer.apply(&pos, &feat, OutputPoints::All, 8, &mut rng).unwrap();
        assert_eq!(same.features.shape(), &[64, 5]);
        assert_eq!(same.positions, pos);

        let (down, cache) = layer
            .apply(&pos, &feat, OutputPoints::Sample(16), 8, &mut rng)
            .unwrap();
        assert_eq!(down.features.shape(), &[16, 5]);
        for q in 0..16 {
            assert!((0..64).any(|i| pos.row(i) == down.positions.row(q)));
        }
        assert_eq!(cache.neighbors().k(), 8);

        let coarse = down.positions.clone();
        let fine = random(&[128, 2], &mut rng);
        let (up, cache) = layer
            .apply(&coarse, &Tensor::filled(&[16, 1], 1.0), OutputPoints::Given(&fine), 4, &mut rng)
            .unwrap();
        assert_eq!(up.features.rows(), 128);
        assert!(cache.neighbors().max_index().unwrap() < 16);
    }

    #[test]
    fn apply_rejects_empty_input() {
        let layer = ConvPoint::new(1, 1, 2, 2, &mut Rng::seed_from_u64(0)).unwrap();
        let r = layer.apply(
            &Tensor::zeros(&[0, 2]),
            &Tensor::zeros(&[0, 1]),
            OutputPoints::All,
            2,
            &mut Rng::seed_from_u64(0),
        );
        assert!(matches!(r, Err(Error::EmptyInput(_))));
    }

    #[test]
    fn discrete_oracle_one_hot() {
        let grid: Vec<Vec<f64>> = (0..9).map(|i| vec![(i % 3) as f64, (i / 3) as f64]).collect();
        let pos = Tensor::from_rows(&grid).unwrap();
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        assert_eq!(discrete_conv_oracle(&pos, &x, &pos, &w, 0.0), 5.0);
    }
}
