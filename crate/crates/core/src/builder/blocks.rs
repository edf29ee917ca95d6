//! Glue-layer blueprints.
//!
//! A blueprint is one dense layer plus an affine readout that is never
//! materialised on its own: the readout is fused into whichever layer
//! consumes it next. Values that must survive a ReLU layer are carried as
//! `relu(v + l_max)` and recovered downstream by subtracting `l_max`, which
//! is exact whenever `|v| <= l_max`.

use std::collections::HashMap;

use crate::error::{param, structural, Result};
use crate::nn::{Activation, DenseLayer, Matrix};
use crate::polar::XorSubsets;

/// `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn identity(n: usize) -> Self {
        Self {
            weights: Matrix::identity(n),
            bias: vec![0.0; n],
        }
    }

    /// Picks `indices` (repeats allowed) out of a `width`-wide vector.
    pub fn select(width: usize, indices: &[usize]) -> Self {
        let mut weights = Matrix::zeros(indices.len(), width);
        for (r, &c) in indices.iter().enumerate() {
            weights[(r, c)] = 1.0;
        }
        Self {
            weights,
            bias: vec![0.0; indices.len()],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weights.mul_vec(x);
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        y
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &Affine) -> Affine {
        let weights = self.weights.matmul(&inner.weights);
        let bias = self.apply(&inner.bias);
        Affine { weights, bias }
    }

    /// Block-diagonal stack: inputs and outputs are concatenated.
    pub fn block_diag(parts: &[&Affine]) -> Affine {
        let rows = parts.iter().map(|p| p.outputs()).sum();
        let cols = parts.iter().map(|p| p.inputs()).sum();
        let mut weights = Matrix::zeros(rows, cols);
        let mut bias = Vec::with_capacity(rows);
        let (mut r0, mut c0) = (0, 0);
        for p in parts {
            for r in 0..p.outputs() {
                for c in 0..p.inputs() {
                    weights[(r0 + r, c0 + c)] = p.weights[(r, c)];
                }
            }
            bias.extend_from_slice(&p.bias);
            r0 += p.outputs();
            c0 += p.inputs();
        }
        Affine { weights, bias }
    }
}

/// What a unit of a blueprint layer carries.
#[derive(Debug, Clone, PartialEq)]
pub enum SlotRole {
    /// A freshly computed quantity.
    Computed(String),
    /// Input `source` carried through, shifted by `offset`.
    Preserved { source: usize, offset: f64 },
}

/// One glue layer and the affine readout of its logical outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlueprint {
    pub layer: DenseLayer,
    pub readout: Affine,
    pub roles: Vec<SlotRole>,
    pub label: String,
}

impl LayerBlueprint {
    pub fn inputs(&self) -> usize {
        self.layer.inputs()
    }

    /// Width of the logical output (after the readout).
    pub fn outputs(&self) -> usize {
        self.readout.outputs()
    }

    /// Layer followed by readout.
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        self.readout.apply(&self.layer.apply(x))
    }

    /// A sub-decoder layer taken as is, with an identity readout.
    pub fn from_layer(layer: DenseLayer, label: impl Into<String>) -> Self {
        let n = layer.outputs();
        let roles = (0..n)
            .map(|i| SlotRole::Computed(format!("unit {i}")))
            .collect();
        Self {
            layer,
            readout: Affine::identity(n),
            roles,
            label: label.into(),
        }
    }

    /// Stacks blueprints side by side; all must share one activation.
    pub fn stack(parts: Vec<LayerBlueprint>) -> Result<Self> {
        let activation = parts
            .first()
            .map(|p| p.layer.activation)
            .ok_or_else(|| structural("cannot stack zero blueprints"))?;
        if parts.iter().any(|p| p.layer.activation != activation) {
            return Err(structural("stacked blueprints must share an activation"));
        }
        let layer_affines: Vec<Affine> = parts
            .iter()
            .map(|p| Affine {
                weights: p.layer.weights.clone(),
                bias: p.layer.bias.clone(),
            })
            .collect();
        let layer = Affine::block_diag(&layer_affines.iter().collect::<Vec<_>>());
        let readout = Affine::block_diag(&parts.iter().map(|p| &p.readout).collect::<Vec<_>>());
        let mut roles = Vec::new();
        let mut input_offset = 0;
        for p in &parts {
            roles.extend(p.roles.iter().map(|r| match r {
                SlotRole::Preserved { source, offset } => SlotRole::Preserved {
                    source: source + input_offset,
                    offset: *offset,
                },
                other => other.clone(),
            }));
            input_offset += p.inputs();
        }
        let ramp = parts.iter().any(|p| p.layer.ramp);
        let label = parts
            .iter()
            .map(|p| p.label.as_str())
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join(" | ");
        Ok(Self {
            layer: DenseLayer::new(layer.weights, layer.bias, activation)?.with_ramp(ramp),
            readout,
            roles,
            label,
        })
    }
}

/// Carries `width` values through a layer with the given activation.
///
/// ReLU units hold `v + l_max`; identity units hold `v` itself.
pub fn preserve_block(width: usize, activation: Activation, l_max: f64) -> Result<LayerBlueprint> {
    let offset = match activation {
        Activation::Relu => l_max,
        Activation::Identity => 0.0,
        Activation::Tanh => {
            return Err(structural(
                "values cannot be carried exactly through a tanh layer",
            ))
        }
    };
    let layer = DenseLayer::new(Matrix::identity(width), vec![offset; width], activation)?;
    Ok(LayerBlueprint {
        layer,
        readout: Affine {
            weights: Matrix::identity(width),
            bias: vec![-offset; width],
        },
        roles: (0..width)
            .map(|source| SlotRole::Preserved { source, offset })
            .collect(),
        label: format!("preserve {width}"),
    })
}

/// First glue layer: parity-LLR precursors plus preserved channel LLRs.
///
/// Units (ReLU, width 2N): `relu(l[i] + l[i+h])`, `relu(l[i] - l[i+h])` for
/// `i < h = N/2`, then `relu(l[j] + l_max)` for every `j`. The readout yields
/// `h` left-branch LLRs `relu(a+b) - relu(a-b) - b` (the min-sum parity LLR,
/// i.e. `-f(a, b)`) followed by the N preserved LLRs.
pub fn propagation_block(n: usize, l_max: f64) -> Result<LayerBlueprint> {
    if n == 0 || n % 2 != 0 {
        return Err(param(format!(
            "propagation block needs an even width, got {n}"
        )));
    }
    let h = n / 2;
    let units = 2 * n;
    let mut w = Matrix::zeros(units, n);
    let mut bias = vec![0.0; units];
    let mut roles = Vec::with_capacity(units);
    for i in 0..h {
        w[(i, i)] = 1.0;
        w[(i, i + h)] = 1.0;
        roles.push(SlotRole::Computed(format!("relu(l{i} + l{})", i + h)));
    }
    for i in 0..h {
        w[(h + i, i)] = 1.0;
        w[(h + i, i + h)] = -1.0;
        roles.push(SlotRole::Computed(format!("relu(l{i} - l{})", i + h)));
    }
    for j in 0..n {
        w[(n + j, j)] = 1.0;
        bias[n + j] = l_max;
        roles.push(SlotRole::Preserved {
            source: j,
            offset: l_max,
        });
    }
    let mut r = Matrix::zeros(h + n, units);
    let mut rb = vec![0.0; h + n];
    for i in 0..h {
        r[(i, i)] = 1.0;
        r[(i, h + i)] = -1.0;
        r[(i, n + h + i)] = -1.0;
        rb[i] = l_max;
    }
    for j in 0..n {
        r[(h + j, n + j)] = 1.0;
        rb[h + j] = -l_max;
    }
    Ok(LayerBlueprint {
        layer: DenseLayer::new(w, bias, Activation::Relu)?,
        readout: Affine {
            weights: r,
            bias: rb,
        },
        roles,
        label: format!("propagation N={n}"),
    })
}

/// Readout coefficients `a_1..a_m` with
/// `parity(S) = sum_j a_j relu(S - j + 1)` for integer `S` in `0..=m`.
///
/// Built from indicator functions `f_i(S) = relu(S - i + 1) -
/// sum_{j>i} (j - i + 1) f_j(S)`; the parity is the sum of the odd ones.
pub fn parity_coefficients(m: usize) -> Vec<f64> {
    // basis[i - 1] holds f_i expanded over relu(S - j + 1), j = 1..=m.
    let mut basis = vec![vec![0.0; m]; m];
    for i in (1..=m).rev() {
        let mut f = vec![0.0; m];
        f[i - 1] = 1.0;
        for j in i + 1..=m {
            let scale = (j - i + 1) as f64;
            for (fv, bj) in f.iter_mut().zip(&basis[j - 1]) {
                *fv -= scale * bj;
            }
        }
        basis[i - 1] = f;
    }
    let mut coeffs = vec![0.0; m];
    for i in (1..=m).step_by(2) {
        for (c, b) in coeffs.iter_mut().zip(&basis[i - 1]) {
            *c += b;
        }
    }
    coeffs
}

/// Re-encoding layer: symbol-domain message bits in, codeword symbols out.
///
/// For each distinct non-empty subset of size `m` the hidden layer holds
/// `relu(S - j + 1)`, `j = 1..=m`, where `S = sum 0.5 (u + 1)` converts the
/// symbols to bits. The readout forms the parity and maps it back with
/// `2x - 1`. Empty subsets read out the constant symbol `-1`.
pub fn xor_layer(subsets: &XorSubsets, k1: usize) -> Result<LayerBlueprint> {
    if subsets.k() != k1 {
        return Err(param(format!(
            "subsets index {} message bits, expected {k1}",
            subsets.k()
        )));
    }
    let mut groups: HashMap<&[usize], usize> = HashMap::new();
    let mut order: Vec<&[usize]> = Vec::new();
    for s in subsets.iter().filter(|s| !s.is_empty()) {
        if !groups.contains_key(s) {
            groups.insert(s, order.len());
            order.push(s);
        }
    }
    let mut first_unit = Vec::with_capacity(order.len());
    let mut units = 0;
    for s in &order {
        first_unit.push(units);
        units += s.len();
    }

    let mut w = Matrix::zeros(units, k1);
    let mut bias = vec![0.0; units];
    let mut roles = Vec::with_capacity(units);
    for (g, s) in order.iter().enumerate() {
        let m = s.len();
        for j in 1..=m {
            let unit = first_unit[g] + j - 1;
            for &bit in s.iter() {
                w[(unit, bit)] = 0.5;
            }
            // S - j + 1 with S = sum 0.5 u + m / 2.
            bias[unit] = 0.5 * m as f64 - j as f64 + 1.0;
            roles.push(SlotRole::Computed(format!("relu(S{g} - {})", j - 1)));
        }
    }

    let out = subsets.len();
    let mut r = Matrix::zeros(out, units);
    let mut rb = vec![-1.0; out];
    for (pos, s) in subsets.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        let g = groups[s];
        for (j, a) in parity_coefficients(s.len()).into_iter().enumerate() {
            r[(pos, first_unit[g] + j)] = 2.0 * a;
        }
        rb[pos] = -1.0;
    }
    Ok(LayerBlueprint {
        layer: DenseLayer::new(w, bias, Activation::Relu)?,
        readout: Affine {
            weights: r,
            bias: rb,
        },
        roles,
        label: format!("re-encode {k1} -> {out}"),
    })
}

/// Sign-flip layer producing right-branch LLRs.
///
/// Inputs: `[en (h), llr (N), left bits (k1)]`. Units: `relu(l[i] + l_max
/// en[i])`, `relu(l[i] - l_max en[i])`, then preserved `en`, `l[h..N]` and
/// left bits. The readout gives `l[i+h] + f(l[i], l_max en[i])`, which equals
/// `l[i+h] - sign(en[i]) l[i]` for `|l[i]| <= l_max` and `en = ±1`, followed
/// by the left bits.
pub fn sign_flip_block(n: usize, k1: usize, l_max: f64) -> Result<LayerBlueprint> {
    if n == 0 || n % 2 != 0 {
        return Err(param(format!(
            "sign-flip block needs an even width, got {n}"
        )));
    }
    let h = n / 2;
    let inputs = h + n + k1;
    let en = |i: usize| i;
    let llr = |j: usize| h + j;
    let bit = |k: usize| h + n + k;

    let units = 4 * h + k1;
    let plus = |i: usize| i;
    let minus = |i: usize| h + i;
    let p_en = |i: usize| 2 * h + i;
    let p_bottom = |i: usize| 3 * h + i;
    let p_bit = |k: usize| 4 * h + k;

    let mut w = Matrix::zeros(units, inputs);
    let mut bias = vec![0.0; units];
    let mut roles = vec![SlotRole::Computed(String::new()); units];
    for i in 0..h {
        w[(plus(i), llr(i))] = 1.0;
        w[(plus(i), en(i))] = l_max;
        roles[plus(i)] = SlotRole::Computed(format!("relu(l{i} + L en{i})"));
        w[(minus(i), llr(i))] = 1.0;
        w[(minus(i), en(i))] = -l_max;
        roles[minus(i)] = SlotRole::Computed(format!("relu(l{i} - L en{i})"));
        w[(p_en(i), en(i))] = 1.0;
        bias[p_en(i)] = l_max;
        roles[p_en(i)] = SlotRole::Preserved {
            source: en(i),
            offset: l_max,
        };
        w[(p_bottom(i), llr(h + i))] = 1.0;
        bias[p_bottom(i)] = l_max;
        roles[p_bottom(i)] = SlotRole::Preserved {
            source: llr(h + i),
            offset: l_max,
        };
    }
    for k in 0..k1 {
        w[(p_bit(k), bit(k))] = 1.0;
        bias[p_bit(k)] = l_max;
        roles[p_bit(k)] = SlotRole::Preserved {
            source: bit(k),
            offset: l_max,
        };
    }

    let mut r = Matrix::zeros(h + k1, units);
    let mut rb = vec![0.0; h + k1];
    for i in 0..h {
        r[(i, p_bottom(i))] = 1.0;
        r[(i, plus(i))] = -1.0;
        r[(i, minus(i))] = 1.0;
        r[(i, p_en(i))] = l_max;
        rb[i] = -l_max - l_max * l_max;
    }
    for k in 0..k1 {
        r[(h + k, p_bit(k))] = 1.0;
        rb[h + k] = -l_max;
    }
    Ok(LayerBlueprint {
        layer: DenseLayer::new(w, bias, Activation::Relu)?,
        readout: Affine {
            weights: r,
            bias: rb,
        },
        roles,
        label: format!("sign flip N={n}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::{f_function, g_function, FVariant};
    use crate::polar::PolarCode;

    fn bits_of(v: u32, m: usize) -> Vec<u8> {
        (0..m).map(|i| ((v >> i) & 1) as u8).collect()
    }

    #[test]
    fn parity_coefficients_small() {
        assert_eq!(parity_coefficients(1), vec![1.0]);
        assert_eq!(parity_coefficients(2), vec![1.0, -2.0]);
        assert_eq!(parity_coefficients(3), vec![1.0, -2.0, 2.0]);
    }

    #[test]
    fn parity_expansion_is_exact() {
        for m in 1..=12 {
            let a = parity_coefficients(m);
            for s in 0..=m {
                let v: f64 = a
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c * (s as f64 - j as f64).max(0.0))
                    .sum();
                assert_eq!(v, (s % 2) as f64, "m={m} S={s}");
            }
        }
    }

    #[test]
    fn xor_two_and_three_bits() {
        for m in [1usize, 2, 3] {
            let subsets = XorSubsets::new(m, vec![(0..m).collect()]).unwrap();
            let bp = xor_layer(&subsets, m).unwrap();
            for v in 0..1u32 << m {
                let bits = bits_of(v, m);
                let symbols: Vec<f64> = bits.iter().map(|&b| 2.0 * f64::from(b) - 1.0).collect();
                let parity = bits.iter().fold(0, |a, b| a ^ b);
                assert_eq!(bp.evaluate(&symbols), vec![2.0 * f64::from(parity) - 1.0]);
            }
        }
    }

    #[test]
    fn xor_empty_subset_is_frozen_symbol() {
        let subsets = XorSubsets::new(2, vec![vec![], vec![1], vec![]]).unwrap();
        let bp = xor_layer(&subsets, 2).unwrap();
        assert_eq!(bp.evaluate(&[1.0, 1.0]), vec![-1.0, 1.0, -1.0]);
        assert_eq!(bp.evaluate(&[1.0, -1.0]), vec![-1.0, -1.0, -1.0]);
    }

    #[test]
    fn xor_layer_encodes_codes() {
        for (n, k) in [(3u32, 4usize), (3, 7), (4, 11)] {
            let code = PolarCode::build(n, k, 1.0).unwrap();
            let bp = xor_layer(&code.xor_subsets(), k).unwrap();
            for v in 0..1u32 << k {
                let m = bits_of(v, k);
                let symbols: Vec<f64> = m.iter().map(|&b| 2.0 * f64::from(b) - 1.0).collect();
                let expect: Vec<f64> = code
                    .encode(&m)
                    .unwrap()
                    .iter()
                    .map(|&b| 2.0 * f64::from(b) - 1.0)
                    .collect();
                assert_eq!(bp.evaluate(&symbols), expect);
            }
        }
    }

    #[test]
    fn propagation_example() {
        let bp = propagation_block(4, 20.0).unwrap();
        let llr = [3.0, -1.0, 2.0, -2.0];
        let out = bp.evaluate(&llr);
        let expect_left = [
            -f_function(3.0, 2.0, FVariant::SignMin),
            -f_function(-1.0, -2.0, FVariant::SignMin),
        ];
        assert_eq!(&out[..2], &expect_left);
        assert_eq!(&out[..2], &[2.0, 1.0]);
        assert_eq!(&out[2..], &llr);
        assert_eq!(bp.layer.outputs(), 8);
        assert!(propagation_block(3, 20.0).is_err());
    }

    #[test]
    fn propagation_zero_input() {
        let bp = propagation_block(8, 20.0).unwrap();
        assert!(bp.evaluate(&[0.0; 8]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn preserved_slots_are_exact_within_bound() {
        let bp = propagation_block(4, 5.0).unwrap();
        for x in [-5.0, -4.9, -0.3, 0.0, 1.7, 5.0] {
            let input = [x, -x, x / 2.0, 5.0];
            let out = bp.evaluate(&input);
            for (o, i) in out[2..].iter().zip(&input) {
                assert!((o - i).abs() <= 1e-9, "{o} vs {i}");
            }
        }
    }

    #[test]
    fn sign_flip_examples() {
        let bp = sign_flip_block(2, 1, 20.0).unwrap();
        // Inputs: [en0, l0, l1, bit0].
        let out = bp.evaluate(&[1.0, 3.0, -1.0, 0.7]);
        assert_eq!(out[0], g_function(3.0, -1.0, 1.0));
        assert_eq!(out[0], -4.0);
        assert!((out[1] - 0.7).abs() <= 1e-9);
        let out = bp.evaluate(&[-1.0, 3.0, -1.0, -1.0]);
        assert_eq!(out, vec![2.0, -1.0]);
        for en in [-1.0, 1.0] {
            assert_eq!(bp.evaluate(&[en, 0.0, 6.5, 1.0])[0], 6.5);
        }
    }

    #[test]
    fn sign_flip_matches_g_on_grid() {
        let bp = sign_flip_block(4, 0, 10.0).unwrap();
        for a in -10..=10 {
            for b in -10..=10 {
                for en in [-1.0, 1.0] {
                    let (a, b) = (a as f64, b as f64);
                    let out = bp.evaluate(&[en, -en, a, -a, b, b / 2.0]);
                    assert_eq!(out[0], g_function(a, b, en));
                    assert_eq!(out[1], g_function(-a, b / 2.0, -en));
                }
            }
        }
    }

    #[test]
    fn stack_and_tanh_preservation() {
        assert!(preserve_block(3, Activation::Tanh, 1.0).is_err());
        let a = preserve_block(2, Activation::Relu, 4.0).unwrap();
        let b = propagation_block(2, 4.0).unwrap();
        let s = LayerBlueprint::stack(vec![a, b]).unwrap();
        assert_eq!(s.inputs(), 4);
        assert_eq!(
            s.evaluate(&[1.0, -2.0, 3.0, 1.0]),
            vec![1.0, -2.0, 1.0, 3.0, 1.0]
        );
        let roles: Vec<_> = s
            .roles
            .iter()
            .filter_map(|r| match r {
                SlotRole::Preserved { source, .. } => Some(*source),
                _ => None,
            })
            .collect();
        assert_eq!(roles, vec![0, 1, 2, 3]);
    }
}
