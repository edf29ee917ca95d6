//! Neural decoder synthesis by recursive concatenation.
//!
//! A decoder for `(N, K)` is assembled from decoders of the two half-length
//! subcodes and three glue layers:
//!
//! 1. a propagation layer whose readout (fused into the left decoder's first
//!    layer) yields the left-branch LLRs;
//! 2. a re-encoding layer turning the left message symbols into the left
//!    codeword symbols;
//! 3. a sign-flip layer whose readout (fused into the right decoder's first
//!    layer) yields the right-branch LLRs.
//!
//! Every value needed later rides along in preserved slots, so the freshly
//! concatenated decoder has exactly `L_left + L_right + 3` layers. Starting
//! from hard-sign leaves, the result reproduces successive cancellation
//! decisions outside a `±eps` dead zone around each leaf LLR.

mod blocks;

use std::collections::HashMap;

pub use blocks::{
    parity_coefficients, preserve_block, propagation_block, sign_flip_block, xor_layer, Affine,
    LayerBlueprint, SlotRole,
};

use crate::error::{param, structural, Error, Result};
use crate::nn::{Activation, DenseLayer, Matrix, NeuralDecoder};
use crate::polar::{BitWord, PolarCode};

pub const DEFAULT_L_MAX: f64 = 20.0;
pub const DEFAULT_EPS: f64 = 1e-3;

/// Symbol-domain threshold: positive soft output means bit 1.
pub fn harden(soft: &[f64]) -> BitWord {
    soft.iter().map(|&v| u8::from(v > 0.0)).collect()
}

/// Decoder for a length-1 code.
///
/// `(1, 0)` is a single identity layer with no outputs. `(1, 1)` is a ReLU
/// ramp `-(relu(l/eps + 1) - relu(l/eps - 1) - 1)`, i.e. `-clamp(l/eps)`,
/// which saturates at `±1` (up to rounding) once `|l| >= eps`.
pub fn trivial_decoder(code: &PolarCode, eps: f64) -> Result<NeuralDecoder> {
    if code.len() != 1 {
        return Err(param(format!(
            "trivial decoders exist only for N = 1, got N = {}",
            code.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(param("eps must be positive"));
    }
    let layers = if code.k() == 0 {
        vec![DenseLayer::new(
            Matrix::zeros(0, 1),
            vec![],
            Activation::Identity,
        )?]
    } else {
        let ramp = DenseLayer::new(
            Matrix::from_vec(2, 1, vec![1.0 / eps, 1.0 / eps]),
            vec![1.0, -1.0],
            Activation::Relu,
        )?
        .with_ramp(true);
        let readout = DenseLayer::new(
            Matrix::from_vec(1, 2, vec![-1.0, 1.0]),
            vec![1.0],
            Activation::Identity,
        )?;
        vec![ramp, readout]
    };
    NeuralDecoder::new(layers, 1, DEFAULT_L_MAX, eps)
}

/// Which subcodes stop the recursion.
#[derive(Debug, Clone, Default)]
pub struct LeafPolicy {
    /// Codes with `N <= max_leaf_size` (and `N > 1`) take a supplied decoder.
    pub max_leaf_size: usize,
    supplied: HashMap<Vec<bool>, NeuralDecoder>,
}

impl LeafPolicy {
    /// Recurse all the way down to length-1 codes.
    pub fn trivial() -> Self {
        Self {
            max_leaf_size: 1,
            supplied: HashMap::new(),
        }
    }

    pub fn with_leaf_size(max_leaf_size: usize) -> Result<Self> {
        if max_leaf_size == 0 || !max_leaf_size.is_power_of_two() {
            return Err(param(format!(
                "leaf size must be a power of two >= 1, got {max_leaf_size}"
            )));
        }
        Ok(Self {
            max_leaf_size,
            supplied: HashMap::new(),
        })
    }

    /// Registers a decoder for the subcode with this frozen mask.
    pub fn supply(&mut self, code: &PolarCode, net: NeuralDecoder) -> Result<()> {
        if net.input_dim() != code.len() || net.output_dim() != code.k() {
            return Err(structural(format!(
                "supplied decoder is {}->{}, code is ({}, {})",
                net.input_dim(),
                net.output_dim(),
                code.len(),
                code.k()
            )));
        }
        self.supplied.insert(code.frozen().to_vec(), net);
        Ok(())
    }

    fn leaf_for(&self, code: &PolarCode) -> Option<&NeuralDecoder> {
        self.supplied.get(code.frozen())
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Bound on channel LLR magnitudes.
    pub l_max: f64,
    pub eps: f64,
    pub policy: LeafPolicy,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            l_max: DEFAULT_L_MAX,
            eps: DEFAULT_EPS,
            policy: LeafPolicy::trivial(),
        }
    }
}

/// Layer counts at one internal node of the partition tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRecord {
    pub n: usize,
    pub k: usize,
    pub layers: usize,
    pub left_layers: usize,
    pub right_layers: usize,
}

/// Output of [`build_decoder`].
#[derive(Debug, Clone)]
pub struct Construction {
    /// Final decoder after identity-layer fusion.
    pub net: NeuralDecoder,
    /// The concatenated decoder before fusion.
    pub unmerged: NeuralDecoder,
    /// Internal nodes in post-order.
    pub nodes: Vec<NodeRecord>,
    /// One provenance line per layer of `unmerged`.
    pub provenance: Vec<String>,
}

impl Construction {
    /// Human-readable construction log.
    pub fn log(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "decoder {} -> {}: {} layers concatenated, {} after fusing identity layers\n",
            self.net.input_dim(),
            self.net.output_dim(),
            self.unmerged.depth(),
            self.net.depth()
        ));
        for node in &self.nodes {
            out.push_str(&format!(
                "node ({}, {}): {} = {} + {} + 3 layers\n",
                node.n, node.k, node.layers, node.left_layers, node.right_layers
            ));
        }
        for (i, (line, layer)) in self
            .provenance
            .iter()
            .zip(self.unmerged.layers())
            .enumerate()
        {
            out.push_str(&format!(
                "layer {i:>3} [{} x {}, {}]: {line}\n",
                layer.outputs(),
                layer.inputs(),
                layer.activation
            ));
        }
        out
    }
}

/// Layers being assembled plus the readout pending on the last one.
struct Assembly {
    layers: Vec<DenseLayer>,
    provenance: Vec<String>,
    // Logical signals as an affine function of the last physical layer.
    pending: Affine,
}

impl Assembly {
    fn new(inputs: usize) -> Self {
        Self {
            layers: Vec::new(),
            provenance: Vec::new(),
            pending: Affine::identity(inputs),
        }
    }

    fn width(&self) -> usize {
        self.pending.outputs()
    }

    /// Emits `bp`, feeding it `input` (an affine map of the current logical
    /// signals). Pending readouts fold into the new layer's weights.
    fn push(&mut self, input: &Affine, bp: LayerBlueprint, provenance: String) -> Result<()> {
        if input.inputs() != self.width() || input.outputs() != bp.inputs() {
            return Err(structural(format!(
                "wiring mismatch: {} signals, selector {}x{}, blueprint takes {}",
                self.width(),
                input.outputs(),
                input.inputs(),
                bp.inputs()
            )));
        }
        let feed = input.compose(&self.pending);
        let fused = Affine {
            weights: bp.layer.weights.clone(),
            bias: bp.layer.bias.clone(),
        }
        .compose(&feed);
        let layer = DenseLayer::new(fused.weights, fused.bias, bp.layer.activation)?
            .with_ramp(bp.layer.ramp);
        self.layers.push(layer);
        self.provenance.push(provenance);
        self.pending = bp.readout;
        Ok(())
    }

    /// Folds `output` (applied to the logical signals) into the final
    /// identity layer.
    fn finish(
        mut self,
        output: &Affine,
        input_dim: usize,
        l_max: f64,
        eps: f64,
    ) -> Result<(NeuralDecoder, Vec<String>)> {
        let last = self
            .layers
            .pop()
            .ok_or_else(|| structural("nothing was assembled"))?;
        if last.activation != Activation::Identity {
            return Err(structural(
                "the right sub-decoder must end in an identity layer",
            ));
        }
        let map = output.compose(&self.pending).compose(&Affine {
            weights: last.weights,
            bias: last.bias,
        });
        self.layers.push(
            DenseLayer::new(map.weights, map.bias, Activation::Identity)?.with_ramp(last.ramp),
        );
        Ok((
            NeuralDecoder::new(self.layers, input_dim, l_max, eps)?,
            self.provenance,
        ))
    }
}

fn describe(net: &NeuralDecoder) -> Vec<String> {
    net.layers()
        .iter()
        .map(|l| format!("{} {}->{}", l.activation, l.inputs(), l.outputs()))
        .collect()
}

fn check_preservable(net: &NeuralDecoder, side: &str) -> Result<()> {
    if net
        .layers()
        .iter()
        .any(|l| l.activation == Activation::Tanh)
    {
        return Err(structural(format!(
            "{side} sub-decoder has tanh layers; preserved values need relu or identity"
        )));
    }
    Ok(())
}

/// Concatenates decoders for the two halves of `code`.
///
/// `l_max` bounds the magnitudes of this node's input LLRs.
pub fn concat(
    left: &NeuralDecoder,
    right: &NeuralDecoder,
    code: &PolarCode,
    l_max: f64,
) -> Result<NeuralDecoder> {
    let left_log = describe(left);
    let right_log = describe(right);
    Ok(concat_logged(left, &left_log, right, &right_log, code, l_max)?.0)
}

fn concat_logged(
    left: &NeuralDecoder,
    left_log: &[String],
    right: &NeuralDecoder,
    right_log: &[String],
    code: &PolarCode,
    l_max: f64,
) -> Result<(NeuralDecoder, Vec<String>)> {
    let (lcode, rcode) = code.split()?;
    let n = code.len();
    let h = n / 2;
    let (k1, k2) = (lcode.k(), rcode.k());
    for (net, sub, side) in [(left, &lcode, "left"), (right, &rcode, "right")] {
        if net.input_dim() != sub.len() || net.output_dim() != sub.k() {
            return Err(structural(format!(
                "{side} decoder is {}->{}, subcode is ({}, {})",
                net.input_dim(),
                net.output_dim(),
                sub.len(),
                sub.k()
            )));
        }
        check_preservable(net, side)?;
    }
    let tag = format!("({n},{})", code.k());
    let mut asm = Assembly::new(n);

    // Logical signals: [left LLRs (h), channel LLRs (n)].
    asm.push(
        &Affine::identity(n),
        propagation_block(n, l_max)?,
        format!("{tag} propagation: 2x{h} parity precursors, {n} LLRs preserved (+l_max)"),
    )?;

    // Logical signals: [left decoder units, channel LLRs (n)].
    for (i, layer) in left.layers().iter().enumerate() {
        let bp = LayerBlueprint::stack(vec![
            LayerBlueprint::from_layer(layer.clone(), "left"),
            preserve_block(n, layer.activation, l_max)?,
        ])?;
        let fused = if i == 0 {
            ", propagation readout fused"
        } else {
            ""
        };
        asm.push(
            &Affine::identity(asm.width()),
            bp,
            format!(
                "{tag} left {}: {}{fused}; {n} LLRs preserved",
                lcode_tag(&lcode),
                left_log.get(i).map(String::as_str).unwrap_or("")
            ),
        )?;
    }

    // Logical signals: [left symbols (k1), channel LLRs (n)].
    let xor_inputs: Vec<usize> = (0..k1).chain(0..k1).chain(k1..k1 + n).collect();
    let bp = LayerBlueprint::stack(vec![
        xor_layer(&lcode.xor_subsets(), k1)?,
        preserve_block(k1 + n, Activation::Relu, l_max)?,
    ])?;
    let units = bp.layer.outputs() - k1 - n;
    asm.push(
        &Affine::select(k1 + n, &xor_inputs),
        bp,
        format!("{tag} re-encode: {units} parity units for {h} symbols; {k1} bits and {n} LLRs preserved"),
    )?;

    // Logical signals: [en (h), left symbols (k1), channel LLRs (n)].
    let flip_inputs: Vec<usize> = (0..h).chain(h + k1..h + k1 + n).chain(h..h + k1).collect();
    asm.push(
        &Affine::select(h + k1 + n, &flip_inputs),
        sign_flip_block(n, k1, l_max)?,
        format!("{tag} sign flip: 2x{h} units, en/{h} LLRs/{k1} bits preserved"),
    )?;

    // Logical signals: [right LLRs or right decoder units, left symbols (k1)].
    for (i, layer) in right.layers().iter().enumerate() {
        let bp = LayerBlueprint::stack(vec![
            LayerBlueprint::from_layer(layer.clone(), "right"),
            preserve_block(k1, layer.activation, l_max)?,
        ])?;
        let fused = if i == 0 {
            ", sign-flip readout fused"
        } else {
            ""
        };
        asm.push(
            &Affine::identity(asm.width()),
            bp,
            format!(
                "{tag} right {}: {}{fused}; {k1} bits preserved",
                lcode_tag(&rcode),
                right_log.get(i).map(String::as_str).unwrap_or("")
            ),
        )?;
    }

    // Logical signals: [right symbols (k2), left symbols (k1)] -> message order.
    let order: Vec<usize> = (k2..k2 + k1).chain(0..k2).collect();
    asm.finish(
        &Affine::select(k1 + k2, &order),
        n,
        l_max,
        left.eps.min(right.eps),
    )
}

fn lcode_tag(code: &PolarCode) -> String {
    format!("({},{})", code.len(), code.k())
}

/// Builds a decoder for `code` by recursive concatenation.
///
/// The left child of a node inherits its LLR bound; the right child's inputs
/// are sums of two such LLRs, so its bound doubles. The final decoder has its
/// identity layers fused away.
pub fn build_decoder(code: &PolarCode, options: &BuildOptions) -> Result<Construction> {
    if !(options.l_max > 0.0) || !(options.eps > 0.0) {
        return Err(param("l_max and eps must be positive"));
    }
    let policy = &options.policy;
    if policy.max_leaf_size == 0 || !policy.max_leaf_size.is_power_of_two() {
        return Err(param("leaf size must be a power of two >= 1"));
    }
    let mut nodes = Vec::new();
    let (mut unmerged, provenance) = build_node(code, options.l_max, options, &mut nodes)?;
    unmerged.l_max = options.l_max;
    let net = unmerged.merge_identity_layers();
    Ok(Construction {
        net,
        unmerged,
        nodes,
        provenance,
    })
}

fn build_node(
    code: &PolarCode,
    bound: f64,
    options: &BuildOptions,
    nodes: &mut Vec<NodeRecord>,
) -> Result<(NeuralDecoder, Vec<String>)> {
    let tag = lcode_tag(code);
    if code.len() == 1 {
        let net = trivial_decoder(code, options.eps)?;
        let log = if code.k() == 0 {
            vec![format!("{tag} frozen leaf")]
        } else {
            vec![
                format!("{tag} hard-sign ramp (slope 1/eps)"),
                format!("{tag} ramp readout"),
            ]
        };
        return Ok((net, log));
    }
    if code.len() <= options.policy.max_leaf_size {
        let net = options.policy.leaf_for(code).cloned().ok_or_else(|| {
            Error::Config(format!("no decoder supplied for leaf {tag} [{}]", code))
        })?;
        let log = describe(&net)
            .into_iter()
            .map(|d| format!("{tag} supplied leaf: {d}"))
            .collect();
        return Ok((net, log));
    }
    let (lcode, rcode) = code.split()?;
    let (left, left_log) = build_node(&lcode, bound, options, nodes)?;
    let (right, right_log) = build_node(&rcode, 2.0 * bound, options, nodes)?;
    let (mut net, log) = concat_logged(&left, &left_log, &right, &right_log, code, bound)?;
    net.l_max = bound;
    nodes.push(NodeRecord {
        n: code.len(),
        k: code.k(),
        layers: net.depth(),
        left_layers: left.depth(),
        right_layers: right.depth(),
    });
    Ok((net, log))
}

/// Hard decisions from a neural decoder.
#[derive(Debug, Clone)]
pub struct NnDecoder {
    net: NeuralDecoder,
}

impl NnDecoder {
    pub fn new(net: NeuralDecoder) -> Self {
        Self { net }
    }

    pub fn net(&self) -> &NeuralDecoder {
        &self.net
    }

    pub fn decode(&self, llrs: &[f64]) -> Result<BitWord> {
        Ok(harden(&self.net.forward(llrs)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{noiseless_llrs, Frame};
    use crate::decoders::ScDecoder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn harden_examples() {
        assert_eq!(harden(&[0.9, -0.2]), vec![1, 0]);
        assert_eq!(harden(&[1.0, -1.0]), vec![1, 0]);
        assert_eq!(harden(&[0.0]), vec![0]);
    }

    #[test]
    fn trivial_one_one() {
        let code = PolarCode::build(0, 1, 0.0).unwrap();
        let net = trivial_decoder(&code, 0.01).unwrap();
        assert_eq!(net.forward(&[2.0]).unwrap(), vec![-1.0]);
        assert_eq!(net.forward(&[-2.0]).unwrap(), vec![1.0]);
        assert_eq!(net.depth(), 2);
        for i in -4000..=4000 {
            let l = f64::from(i) * 1e-3;
            let y = net.forward(&[l]).unwrap()[0];
            assert!(y.abs() <= 1.0 + 1e-12);
            if l.abs() >= 0.01 {
                assert!((y + l.signum()).abs() <= 1e-12, "llr {l}");
            }
        }
    }

    #[test]
    fn trivial_one_zero_and_errors() {
        let code = PolarCode::with_frozen(1, &[0]).unwrap();
        let net = trivial_decoder(&code, 1e-3).unwrap();
        assert_eq!((net.depth(), net.output_dim()), (1, 0));
        assert!(net.forward(&[3.0]).unwrap().is_empty());
        let two = PolarCode::build(1, 1, 0.0).unwrap();
        assert!(trivial_decoder(&two, 1e-3).is_err());
    }

    #[test]
    fn golden_four_three() {
        let code = PolarCode::with_frozen(4, &[0]).unwrap();
        let c = build_decoder(&code, &BuildOptions::default()).unwrap();
        let llrs = noiseless_llrs(&[0, 0, 1, 1], 20.0);
        assert_eq!(harden(&c.net.forward(&llrs).unwrap()), vec![1, 0, 1]);
        assert_eq!(harden(&c.unmerged.forward(&llrs).unwrap()), vec![1, 0, 1]);
    }

    #[test]
    fn four_three_matches_sc_on_noisy_frames() {
        let code = PolarCode::with_frozen(4, &[0]).unwrap();
        let net = build_decoder(&code, &BuildOptions::default()).unwrap().net;
        let sc = ScDecoder::new(code.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut disagreements = 0;
        for _ in 0..10_000 {
            let f = Frame::random(&code, 0.9, 20.0, &mut rng);
            let trace = sc.decode_traced(&f.llrs).unwrap();
            let nn = harden(&net.forward(&f.llrs).unwrap());
            if nn != trace.message {
                assert!(trace.min_leaf_magnitude < net.eps);
                disagreements += 1;
            }
        }
        assert!(disagreements <= 1);
    }

    #[test]
    fn layer_count_law() {
        let code = PolarCode::with_frozen(4, &[0]).unwrap();
        let c = build_decoder(&code, &BuildOptions::default()).unwrap();
        // (2,1) = (1,0)[1] + (1,1)[2] + 3, (2,2) = 2 + 2 + 3, (4,3) = 6 + 7 + 3.
        let counts: Vec<_> = c.nodes.iter().map(|n| (n.n, n.k, n.layers)).collect();
        assert_eq!(counts, vec![(2, 1, 6), (2, 2, 7), (4, 3, 16)]);
        for n in &c.nodes {
            assert_eq!(n.layers, n.left_layers + n.right_layers + 3);
        }
        assert_eq!(c.unmerged.depth(), 16);
        assert_eq!(c.provenance.len(), 16);
        assert!(c.net.depth() < c.unmerged.depth());
    }

    #[test]
    fn concat_of_two_ramps_has_seven_layers() {
        let leaf = PolarCode::build(0, 1, 0.0).unwrap();
        let t = trivial_decoder(&leaf, 1e-3).unwrap();
        let code = PolarCode::with_frozen(2, &[]).unwrap();
        let net = concat(&t, &t, &code, 20.0).unwrap();
        assert_eq!(net.depth(), 7);
    }

    #[test]
    fn concat_with_frozen_left() {
        let frozen_leaf = PolarCode::with_frozen(1, &[0]).unwrap();
        let info_leaf = PolarCode::build(0, 1, 0.0).unwrap();
        let a = trivial_decoder(&frozen_leaf, 1e-3).unwrap();
        let b = trivial_decoder(&info_leaf, 1e-3).unwrap();
        let code = PolarCode::with_frozen(2, &[0]).unwrap();
        let net = concat(&a, &b, &code, 20.0).unwrap();
        assert_eq!(net.depth(), 1 + 2 + 3);
        // Left frozen: right LLR = 3 + (-1) = 2 -> bit 0.
        assert_eq!(harden(&net.forward(&[3.0, -1.0]).unwrap()), vec![0]);
        assert_eq!(harden(&net.forward(&[3.0, -4.0]).unwrap()), vec![1]);
    }

    #[test]
    fn concat_rejects_mismatches() {
        let leaf = PolarCode::build(0, 1, 0.0).unwrap();
        let t = trivial_decoder(&leaf, 1e-3).unwrap();
        let code = PolarCode::with_frozen(2, &[0]).unwrap();
        assert!(matches!(
            concat(&t, &t, &code, 20.0),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn build_one_one_is_trivial() {
        let code = PolarCode::build(0, 1, 0.0).unwrap();
        let c = build_decoder(&code, &BuildOptions::default()).unwrap();
        assert_eq!(c.net, trivial_decoder(&code, DEFAULT_EPS).unwrap());
        assert!(c.nodes.is_empty());
    }

    #[test]
    fn missing_leaf_is_config_error() {
        let code = PolarCode::build(4, 11, 1.0).unwrap();
        let options = BuildOptions {
            policy: LeafPolicy::with_leaf_size(8).unwrap(),
            ..BuildOptions::default()
        };
        assert!(matches!(
            build_decoder(&code, &options),
            Err(Error::Config(_))
        ));
        assert!(LeafPolicy::with_leaf_size(6).is_err());
    }

    #[test]
    fn supplied_leaves_compose() {
        let code = PolarCode::build(4, 11, 1.0).unwrap();
        let (l, r) = code.split().unwrap();
        let mut policy = LeafPolicy::with_leaf_size(8).unwrap();
        for sub in [&l, &r] {
            let leaf = build_decoder(sub, &BuildOptions::default()).unwrap().net;
            policy.supply(sub, leaf).unwrap();
        }
        let c = build_decoder(
            &code,
            &BuildOptions {
                policy,
                ..BuildOptions::default()
            },
        )
        .unwrap();
        assert_eq!(c.nodes.len(), 1);
        let sc = ScDecoder::new(code.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let f = Frame::random(&code, 0.76, 20.0, &mut rng);
            let t = sc.decode_traced(&f.llrs).unwrap();
            if t.min_leaf_magnitude >= 1e-3 {
                assert_eq!(harden(&c.net.forward(&f.llrs).unwrap()), t.message);
            }
        }
    }

    #[test]
    fn construction_log_mentions_every_layer() {
        let code = PolarCode::build(3, 4, 1.0).unwrap();
        let c = build_decoder(&code, &BuildOptions::default()).unwrap();
        let log = c.log();
        assert_eq!(
            log.lines().filter(|l| l.starts_with("layer")).count(),
            c.unmerged.depth()
        );
        assert!(log.contains("re-encode"));
    }
}
