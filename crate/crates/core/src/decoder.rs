//! GNN decoder: generates an architecture DAG from a latent code node by
//! node in topological order. Each new node's type is predicted from the
//! last hidden state, edges to earlier nodes are decided in reverse index
//! order, and the node's hidden state is refreshed by a GRU over the gated
//! sum of its predecessors' hiddens after every accepted edge.

use serde::{Deserialize, Serialize};

use crate::diffcore::nn::{GruCell, Linear, Mlp};
use crate::diffcore::tape::{Tape, Var};
use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};
use crate::space::{is_valid, ArchDag, NodeType, MAX_NODES, NODE_VOCAB};

/// Probabilities are clamped to this band inside the losses so they stay
/// finite for arbitrary parameters.
pub const PROB_FLOOR: f64 = 1e-12;

const START_MASK: f64 = -1e30;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub d_z: usize,
    pub d_h: usize,
    pub mlp_hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            d_z: 56,
            d_h: 56,
            mlp_hidden: 56,
        }
    }
}

/// How node types and edges are drawn during decoding.
#[derive(Clone, Copy, Debug)]
pub enum DecodeMode {
    /// Sample types from the softmax row and edges as Bernoulli draws.
    Stochastic(u64),
    /// Max-probability type; edge linked iff its probability exceeds 0.5.
    Deterministic,
}

/// One edge decision made while decoding.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeStep {
    pub src: usize,
    pub dst: usize,
    pub prob: f64,
    pub accepted: bool,
}

/// Full record of one decode: per-node type probability rows (for nodes
/// 1..), per-candidate edge probabilities in scan order, the resulting DAG,
/// and whether END was forced by the node cap.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub node_probs: Vec<Vec<f64>>,
    pub edge_steps: Vec<EdgeStep>,
    pub dag: ArchDag,
    pub truncated: bool,
}

pub struct GraphDecoder {
    pub cfg: DecoderConfig,
    nn_init: Mlp,
    gru: GruCell,
    agg_gate: Linear,
    agg_map: Linear,
    nn_node: Mlp,
    nn_edge: Mlp,
}

impl GraphDecoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: DecoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let d = cfg.d_h;
        // GRU input: node-type one-hot plus a one-hot position code.
        let d_in = NODE_VOCAB + MAX_NODES;
        Ok(GraphDecoder {
            nn_init: Mlp::new(store, &format!("{prefix}.init"), cfg.d_z, cfg.mlp_hidden, d, rng)?,
            gru: GruCell::new(store, &format!("{prefix}.gru"), d_in, d, rng)?,
            agg_gate: Linear::new(store, &format!("{prefix}.agg_gate"), d, d, rng)?,
            agg_map: Linear::new(store, &format!("{prefix}.agg_map"), d, d, rng)?,
            nn_node: Mlp::new(store, &format!("{prefix}.node"), d, cfg.mlp_hidden, NODE_VOCAB, rng)?,
            nn_edge: Mlp::new(store, &format!("{prefix}.edge"), 2 * d, cfg.mlp_hidden, 1, rng)?,
            cfg,
        })
    }

    /// `h_{v_0}`: an MLP over the latent code followed by tanh, so entries
    /// lie in (-1, 1).
    pub fn init_state(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        if tape.value(z).cols() != self.cfg.d_z || tape.value(z).rows() != 1 {
            return Err(Error::ShapeMismatch {
                op: "init_state",
                lhs: tape.value(z).shape().to_vec(),
                rhs: vec![1, self.cfg.d_z],
            });
        }
        let h = self.nn_init.apply(tape, store, z)?;
        Ok(tape.tanh(h))
    }

    /// Gated-sum message: `sum_u gate(h_u) .* map(h_u)`; the empty set gives
    /// the zero vector.
    pub fn aggregate_messages(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        hiddens: &[Var],
    ) -> Result<Var> {
        if hiddens.is_empty() {
            return Ok(tape.constant(Tensor::zeros(vec![1, self.cfg.d_h])));
        }
        let mut total: Option<Var> = None;
        for &h in hiddens {
            let gate = self.agg_gate.apply(tape, store, h)?;
            let gate = tape.sigmoid(gate);
            let mapped = self.agg_map.apply(tape, store, h)?;
            let term = tape.mul(gate, mapped)?;
            total = Some(match total {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        Ok(total.expect("non-empty"))
    }

    /// Probability row over the 7 node types from the current graph state,
    /// with START masked out (it is never predicted).
    pub fn predict_node_type(&self, tape: &mut Tape, store: &ParamStore, state: Var) -> Result<Var> {
        let logits = self.nn_node.apply(tape, store, state)?;
        let mut mask = vec![0.0; NODE_VOCAB];
        mask[NodeType::Start.index()] = START_MASK;
        let mask = tape.constant(Tensor::row(mask));
        let masked = tape.add(logits, mask)?;
        Ok(tape.softmax_rows(masked))
    }

    /// Probability of a directed edge `v_j -> v_i` from the two hiddens.
    pub fn predict_edge(&self, tape: &mut Tape, store: &ParamStore, h_j: Var, h_i: Var) -> Result<Var> {
        let joined = tape.concat_cols(&[h_j, h_i])?;
        let logit = self.nn_edge.apply(tape, store, joined)?;
        Ok(tape.sigmoid(logit))
    }

    fn gru_input(&self, tape: &mut Tape, node_type: NodeType, position: usize) -> Var {
        let mut input = vec![0.0; NODE_VOCAB + MAX_NODES];
        input[node_type.index()] = 1.0;
        input[NODE_VOCAB + position] = 1.0;
        tape.constant(Tensor::row(input))
    }

    /// Generate a DAG from a latent code. The decoder walks node positions
    /// 1..8; sampling END (or hitting the node cap, which forces END and sets
    /// `truncated`) stops decoding, after which every leaf node is connected
    /// to the END node.
    pub fn decode(&self, store: &ParamStore, z: &[f64], mode: DecodeMode) -> Result<DecodeTrace> {
        let mut tape = Tape::new();
        let zv = tape.constant(Tensor::row(z.to_vec()));
        let mut rng = match mode {
            DecodeMode::Stochastic(seed) => Some(rng_from(seed)),
            DecodeMode::Deterministic => None,
        };

        let h0 = self.init_state(&mut tape, store, zv)?;
        let mut hiddens: Vec<Var> = vec![h0];
        let mut nodes = vec![NodeType::Start];
        let mut edges: Vec<(usize, usize)> = Vec::new();
        let mut node_probs = Vec::new();
        let mut edge_steps = Vec::new();
        let mut truncated = false;

        for i in 1..MAX_NODES {
            let state = hiddens[i - 1];
            let probs_var = self.predict_node_type(&mut tape, store, state)?;
            let probs = tape.value(probs_var).data().to_vec();
            if !probs.iter().all(|p| p.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("node type probabilities at step {i}"),
                });
            }
            node_probs.push(probs.clone());
            let mut chosen = match &mut rng {
                Some(rng) => sample_index(&probs, rng),
                None => argmax(&probs),
            };
            if i == MAX_NODES - 1 && chosen != NodeType::End.index() {
                // The node cap forces END.
                chosen = NodeType::End.index();
                truncated = true;
            }
            let node_type = NodeType::from_index(chosen).expect("index in vocabulary");

            if node_type == NodeType::End {
                nodes.push(NodeType::End);
                // Connect every node without successors to END.
                let have_out: Vec<bool> = (0..i).map(|n| edges.iter().any(|&(s, _)| s == n)).collect();
                for (n, out) in have_out.iter().enumerate() {
                    if !out {
                        edges.push((n, i));
                    }
                }
                break;
            }

            nodes.push(node_type);
            let input = self.gru_input(&mut tape, node_type, i);
            let empty = self.aggregate_messages(&mut tape, store, &[])?;
            let mut h_i = self.gru.apply(&mut tape, store, input, empty)?;
            let mut pred_hiddens: Vec<(usize, Var)> = Vec::new();
            for j in (0..i).rev() {
                let p_var = self.predict_edge(&mut tape, store, hiddens[j], h_i)?;
                let p = tape.scalar_value(p_var);
                if !p.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("edge probability ({j}, {i})"),
                    });
                }
                let accepted = match &mut rng {
                    Some(rng) => {
                        use rand::Rng as _;
                        rng.random_range(0.0..1.0) < p
                    }
                    None => p > 0.5,
                };
                edge_steps.push(EdgeStep {
                    src: j,
                    dst: i,
                    prob: p,
                    accepted,
                });
                if accepted {
                    edges.push((j, i));
                    pred_hiddens.push((j, hiddens[j]));
                    // Refresh h_i over all current predecessors (ascending).
                    pred_hiddens.sort_by_key(|(idx, _)| *idx);
                    let hs: Vec<Var> = pred_hiddens.iter().map(|(_, h)| *h).collect();
                    let m = self.aggregate_messages(&mut tape, store, &hs)?;
                    h_i = self.gru.apply(&mut tape, store, input, m)?;
                }
            }
            hiddens.push(h_i);
        }

        Ok(DecodeTrace {
            node_probs,
            edge_steps,
            dag: ArchDag::new(nodes, edges),
            truncated,
        })
    }

    /// Teacher-forced reconstruction losses against a valid target DAG:
    /// node cross-entropy summed over nodes 1..7 and edge binary
    /// cross-entropy summed over every candidate pair the decoder scans.
    /// Both terms are differentiable with respect to `z` and the decoder
    /// parameters.
    pub fn teacher_forced_losses(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        target: &ArchDag,
    ) -> Result<(Var, Var)> {
        if !is_valid(target) {
            return Err(Error::InvalidDag {
                reason: "teacher forcing requires a valid target".to_string(),
            });
        }
        let h0 = self.init_state(tape, store, z)?;
        let mut hiddens: Vec<Var> = vec![h0];
        let mut node_ce: Option<Var> = None;
        let mut edge_bce: Option<Var> = None;

        for i in 1..MAX_NODES {
            let state = hiddens[i - 1];
            let probs = self.predict_node_type(tape, store, state)?;
            let true_type = target.nodes[i];
            let mut onehot = vec![0.0; NODE_VOCAB];
            onehot[true_type.index()] = 1.0;
            let onehot = tape.constant(Tensor::row(onehot));
            let picked = tape.mul(probs, onehot)?;
            let p_true = tape.sum_all(picked);
            let p_true = tape.clamp(p_true, PROB_FLOOR, 1.0 - PROB_FLOOR);
            let lp = tape.ln(p_true);
            let ce = tape.affine(lp, -1.0, 0.0);
            node_ce = Some(match node_ce {
                None => ce,
                Some(acc) => tape.add(acc, ce)?,
            });

            if true_type == NodeType::End {
                break;
            }

            let input = self.gru_input(tape, true_type, i);
            let empty = self.aggregate_messages(tape, store, &[])?;
            let mut h_i = self.gru.apply(tape, store, input, empty)?;
            let mut pred_hiddens: Vec<(usize, Var)> = Vec::new();
            for j in (0..i).rev() {
                let p = self.predict_edge(tape, store, hiddens[j], h_i)?;
                let is_edge = target.edges.contains(&(j, i));
                let prob = if is_edge {
                    p
                } else {
                    // P(no edge) = 1 - p
                    tape.affine(p, -1.0, 1.0)
                };
                let prob = tape.clamp(prob, PROB_FLOOR, 1.0 - PROB_FLOOR);
                let lp = tape.ln(prob);
                let bce = tape.affine(lp, -1.0, 0.0);
                edge_bce = Some(match edge_bce {
                    None => bce,
                    Some(acc) => tape.add(acc, bce)?,
                });
                if is_edge {
                    pred_hiddens.push((j, hiddens[j]));
                    pred_hiddens.sort_by_key(|(idx, _)| *idx);
                    let hs: Vec<Var> = pred_hiddens.iter().map(|(_, h)| *h).collect();
                    let m = self.aggregate_messages(tape, store, &hs)?;
                    h_i = self.gru.apply(tape, store, input, m)?;
                }
            }
            hiddens.push(h_i);
        }

        let node_ce = node_ce.expect("at least one node predicted");
        let edge_bce = edge_bce.expect("at least one edge candidate scanned");
        Ok((node_ce, edge_bce))
    }
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    use rand::Rng as _;
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;
    use crate::space::{cell_to_dag, CellOp, CellSpec};
    use rand::Rng as _;

    fn tiny_cfg() -> DecoderConfig {
        DecoderConfig {
            d_z: 4,
            d_h: 6,
            mlp_hidden: 6,
        }
    }

    fn build(seed: u64) -> (ParamStore, GraphDecoder) {
        let mut store = ParamStore::new();
        let mut rng = rng_from(seed);
        let dec = GraphDecoder::new(&mut store, "dec", tiny_cfg(), &mut rng).unwrap();
        (store, dec)
    }

    fn zero_params(store: &mut ParamStore, prefix: &str) {
        for name in store.names().map(String::from).collect::<Vec<_>>() {
            if name.starts_with(prefix) {
                let shape = store.get(&name).unwrap().shape().to_vec();
                store.set_value(&name, Tensor::zeros(shape)).unwrap();
            }
        }
    }

    #[test]
    fn init_state_is_bounded_and_deterministic() {
        let (store, dec) = build(1);
        let z = vec![3.0, -2.0, 10.0, -10.0];
        let mut tape = Tape::new();
        let zv = tape.constant(Tensor::row(z.clone()));
        let h = dec.init_state(&mut tape, &store, zv).unwrap();
        for &x in tape.value(h).data() {
            assert!(x.abs() <= 1.0);
        }
        let zv2 = tape.constant(Tensor::row(z));
        let h2 = dec.init_state(&mut tape, &store, zv2).unwrap();
        assert_eq!(tape.value(h).data(), tape.value(h2).data());
    }

    #[test]
    fn zeroed_init_network_gives_zero_state() {
        let (mut store, dec) = build(2);
        zero_params(&mut store, "dec.init");
        let mut tape = Tape::new();
        let zv = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0, 4.0]));
        let h = dec.init_state(&mut tape, &store, zv).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0; 6]);
    }

    #[test]
    fn aggregate_handles_empty_singleton_and_permutation() {
        let (store, dec) = build(3);
        let mut tape = Tape::new();
        let empty = dec.aggregate_messages(&mut tape, &store, &[]).unwrap();
        assert_eq!(tape.value(empty).data(), &[0.0; 6]);

        let mut rng = rng_from(4);
        let hs: Vec<Var> = (0..3)
            .map(|_| {
                let row: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                tape.constant(Tensor::row(row))
            })
            .collect();

        // Singleton equals gate(h) .* map(h).
        let single = dec.aggregate_messages(&mut tape, &store, &hs[..1]).unwrap();
        let gate = dec.agg_gate.apply(&mut tape, &store, hs[0]).unwrap();
        let gate = tape.sigmoid(gate);
        let mapped = dec.agg_map.apply(&mut tape, &store, hs[0]).unwrap();
        let expect = tape.mul(gate, mapped).unwrap();
        assert_eq!(tape.value(single).data(), tape.value(expect).data());

        // Permutation invariance of the sum (within fp round-off).
        let fwd = dec.aggregate_messages(&mut tape, &store, &hs).unwrap();
        let rev: Vec<Var> = hs.iter().rev().copied().collect();
        let bwd = dec.aggregate_messages(&mut tape, &store, &rev).unwrap();
        for (a, b) in tape.value(fwd).data().iter().zip(tape.value(bwd).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn node_type_rows_are_probabilities_with_start_masked() {
        let (store, dec) = build(5);
        let mut tape = Tape::new();
        let state = tape.constant(Tensor::row(vec![0.3; 6]));
        let probs = dec.predict_node_type(&mut tape, &store, state).unwrap();
        let row = tape.value(probs).data();
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert_eq!(row[NodeType::Start.index()], 0.0);
    }

    #[test]
    fn zeroed_node_network_is_uniform_over_unmasked_types() {
        let (mut store, dec) = build(6);
        zero_params(&mut store, "dec.node");
        let mut tape = Tape::new();
        let state = tape.constant(Tensor::row(vec![0.5; 6]));
        let probs = dec.predict_node_type(&mut tape, &store, state).unwrap();
        let row = tape.value(probs).data();
        assert_eq!(row[0], 0.0);
        for &p in &row[1..] {
            assert!((p - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_probability_is_half_for_zeroed_network_and_in_open_interval() {
        let (mut store, dec) = build(7);
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(vec![0.2; 6]));
        let b = tape.constant(Tensor::row(vec![-0.4; 6]));
        let p = dec.predict_edge(&mut tape, &store, a, b).unwrap();
        let v = tape.scalar_value(p);
        assert!(v > 0.0 && v < 1.0);

        // Bindings are cached per tape, so rebuild after zeroing the store.
        zero_params(&mut store, "dec.edge");
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(vec![0.2; 6]));
        let b = tape.constant(Tensor::row(vec![-0.4; 6]));
        let p0 = dec.predict_edge(&mut tape, &store, a, b).unwrap();
        assert_eq!(tape.scalar_value(p0), 0.5);
    }

    #[test]
    fn decode_always_terminates_with_forward_edges() {
        for seed in 0..50 {
            let (store, dec) = build(100 + seed);
            let z: Vec<f64> = rng_from(seed)
                .sample_iter(rand_distr::StandardNormal)
                .take(4)
                .collect();
            let trace = dec.decode(&store, &z, DecodeMode::Stochastic(seed)).unwrap();
            assert!(trace.dag.num_nodes() <= MAX_NODES);
            for &(s, d) in &trace.dag.edges {
                assert!(s < d, "backward edge ({s}, {d})");
            }
            assert_eq!(*trace.dag.nodes.last().unwrap(), NodeType::End);
            for row in &trace.node_probs {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
            for step in &trace.edge_steps {
                assert!((0.0..=1.0).contains(&step.prob));
            }
        }
    }

    #[test]
    fn deterministic_decode_is_reproducible() {
        let (store, dec) = build(8);
        let z = vec![0.1, -0.2, 0.3, -0.4];
        let a = dec.decode(&store, &z, DecodeMode::Deterministic).unwrap();
        let b = dec.decode(&store, &z, DecodeMode::Deterministic).unwrap();
        assert_eq!(a.dag, b.dag);
        assert_eq!(a.node_probs, b.node_probs);
        assert_eq!(a.truncated, b.truncated);
    }

    #[test]
    fn edge_candidates_are_scanned_in_reverse_order() {
        let (store, dec) = build(9);
        let z = vec![0.5, 0.5, -0.5, -0.5];
        let trace = dec.decode(&store, &z, DecodeMode::Stochastic(42)).unwrap();
        let mut per_node: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for step in &trace.edge_steps {
            per_node.entry(step.dst).or_default().push(step.src);
        }
        for (dst, srcs) in per_node {
            let expect: Vec<usize> = (0..dst).rev().collect();
            assert_eq!(srcs, expect, "scan order for node {dst}");
        }
    }

    #[test]
    fn stochastic_decodes_never_emit_start_and_respect_the_cap() {
        let (store, dec) = build(10);
        for seed in 0..1000 {
            let z: Vec<f64> = rng_from(7000 + seed)
                .sample_iter(rand_distr::StandardNormal)
                .take(4)
                .collect();
            let trace = dec.decode(&store, &z, DecodeMode::Stochastic(seed)).unwrap();
            assert!(trace.dag.num_nodes() <= MAX_NODES);
            for n in &trace.dag.nodes[1..] {
                assert_ne!(*n, NodeType::Start);
            }
        }
    }

    #[test]
    fn teacher_forcing_rejects_invalid_targets() {
        let (store, dec) = build(11);
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::row(vec![0.0; 4]));
        let bad = ArchDag::new(vec![NodeType::Start, NodeType::End], vec![(0, 1)]);
        let err = dec.teacher_forced_losses(&mut tape, &store, z, &bad).unwrap_err();
        assert!(matches!(err, Error::InvalidDag { .. }));
    }

    #[test]
    fn teacher_forced_loss_is_finite_and_counts_terms() {
        let (store, dec) = build(12);
        let cell = CellSpec::new([
            CellOp::Conv3x3,
            CellOp::SkipConnect,
            CellOp::Zeroize,
            CellOp::AvgPool3x3,
            CellOp::Conv1x1,
            CellOp::Conv3x3,
        ]);
        let target = cell_to_dag(&cell);
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::row(vec![0.3, -0.1, 0.2, 0.9]));
        let (ce, bce) = dec
            .teacher_forced_losses(&mut tape, &store, z, &target)
            .unwrap();
        assert!(tape.scalar_value(ce).is_finite());
        assert!(tape.scalar_value(bce).is_finite());
        assert!(tape.scalar_value(ce) > 0.0);
        assert!(tape.scalar_value(bce) > 0.0);
    }

    #[test]
    fn teacher_forced_gradient_wrt_z_matches_finite_differences() {
        let (store, dec) = build(13);
        let target = cell_to_dag(&CellSpec::new([CellOp::Conv1x1; 6]));
        let point = Tensor::from_vec(vec![1, 4], vec![0.25, -0.5, 0.75, -1.0]).unwrap();
        let err = grad_check(
            |tape, z| {
                let (ce, bce) = dec.teacher_forced_losses(tape, &store, z, &target)?;
                tape.add(ce, bce)
            },
            &point,
        )
        .unwrap();
        assert!(err < 1e-3, "rel err {err}");
    }
}
