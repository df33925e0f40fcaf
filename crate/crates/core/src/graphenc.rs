//! Bidirectional asynchronous-message-passing encoder for architecture DAGs.
//!
//! Nodes are processed in topological order; each node's hidden state is a
//! GRU over its type one-hot with the gated sum of its predecessors' hiddens
//! as the recurrent input. The forward pass reads out the END node's hidden,
//! the backward pass runs the same machinery (separate parameters) on the
//! edge-reversed DAG, and the two readouts are concatenated.

use serde::{Deserialize, Serialize};

use crate::diffcore::nn::{GruCell, Linear};
use crate::diffcore::tape::{Tape, Var};
use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::space::{is_valid, ArchDag, NODE_VOCAB};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GraphEncoderConfig {
    pub d_h: usize,
}

impl Default for GraphEncoderConfig {
    fn default() -> Self {
        GraphEncoderConfig { d_h: 512 }
    }
}

/// Forward and backward readouts plus their concatenation.
#[derive(Clone, Debug)]
pub struct GraphEmbedding {
    pub h_f: Vec<f64>,
    pub h_b: Vec<f64>,
    pub combined: Vec<f64>,
}

struct DirectionParams {
    gru: GruCell,
    gate: Linear,
    map: Linear,
}

pub struct GraphEncoder {
    pub cfg: GraphEncoderConfig,
    fwd: DirectionParams,
    bwd: DirectionParams,
}

impl GraphEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: GraphEncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mk = |store: &mut ParamStore, dir: &str, rng: &mut Rng| -> Result<DirectionParams> {
            let d = cfg.d_h;
            Ok(DirectionParams {
                gru: GruCell::new(store, &format!("{prefix}.{dir}.gru"), NODE_VOCAB, d, rng)?,
                gate: Linear::new(store, &format!("{prefix}.{dir}.gate"), d, d, rng)?,
                map: Linear::new(store, &format!("{prefix}.{dir}.map"), d, d, rng)?,
            })
        };
        Ok(GraphEncoder {
            fwd: mk(store, "fwd", rng)?,
            bwd: mk(store, "bwd", rng)?,
            cfg,
        })
    }

    /// Message passing over a batch of DAGs that share the same node count
    /// and edge set (all valid cell DAGs do); row `b` of every intermediate
    /// holds graph `b`. Arithmetic per row is identical to running each
    /// graph alone.
    fn run_direction(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        dags: &[&ArchDag],
        params: &DirectionParams,
    ) -> Result<Var> {
        let template = dags[0];
        let n = template.num_nodes();
        debug_assert!(dags.iter().all(|d| d.num_nodes() == n && d.edges == template.edges));
        let batch = dags.len();
        let mut hiddens: Vec<Var> = Vec::with_capacity(n);
        // The starting node has no predecessors; its hidden is the zero vector.
        hiddens.push(tape.constant(Tensor::zeros(vec![batch, self.cfg.d_h])));
        for i in 1..n {
            let mut terms = Vec::new();
            for u in template.predecessors(i) {
                let gate = params.gate.apply(tape, store, hiddens[u])?;
                let gate = tape.sigmoid(gate);
                let mapped = params.map.apply(tape, store, hiddens[u])?;
                terms.push(tape.mul(gate, mapped)?);
            }
            let m = match terms.len() {
                0 => tape.constant(Tensor::zeros(vec![batch, self.cfg.d_h])),
                1 => terms[0],
                _ => {
                    let mut acc = terms[0];
                    for &t in &terms[1..] {
                        acc = tape.add(acc, t)?;
                    }
                    acc
                }
            };
            let mut onehots = vec![0.0; batch * NODE_VOCAB];
            for (b, dag) in dags.iter().enumerate() {
                onehots[b * NODE_VOCAB + dag.nodes[i].index()] = 1.0;
            }
            let input = tape.constant(Tensor::from_vec(vec![batch, NODE_VOCAB], onehots)?);
            hiddens.push(params.gru.apply(tape, store, input, m)?);
        }
        Ok(*hiddens.last().expect("dag has nodes"))
    }

    /// Forward readout: the END node's hidden after message passing in
    /// topological order. `[1, d_h]`.
    pub fn encode_forward_on(&self, tape: &mut Tape, store: &ParamStore, dag: &ArchDag) -> Result<Var> {
        require_valid(dag)?;
        self.run_direction(tape, store, &[dag], &self.fwd)
    }

    /// Both directions concatenated: `[1, 2 * d_h]`.
    pub fn encode_bidirectional_on(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        dag: &ArchDag,
    ) -> Result<Var> {
        self.encode_bidirectional_batch_on(tape, store, &[dag])
    }

    /// Batched encoding of DAGs sharing the canonical edge template; row `b`
    /// of the `[batch, 2 * d_h]` output is graph `b`'s embedding.
    pub fn encode_bidirectional_batch_on(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        dags: &[&ArchDag],
    ) -> Result<Var> {
        if dags.is_empty() {
            return Err(Error::EmptySet {
                op: "encode_bidirectional_batch",
            });
        }
        for dag in dags {
            require_valid(dag)?;
        }
        let h_f = self.run_direction(tape, store, dags, &self.fwd)?;
        let reversed: Vec<ArchDag> = dags.iter().map(|d| d.reversed()).collect();
        let reversed_refs: Vec<&ArchDag> = reversed.iter().collect();
        let h_b = self.run_direction(tape, store, &reversed_refs, &self.bwd)?;
        tape.concat_cols(&[h_f, h_b])
    }

    /// Forward-only convenience returning plain vectors.
    pub fn encode_bidirectional(&self, store: &ParamStore, dag: &ArchDag) -> Result<GraphEmbedding> {
        require_valid(dag)?;
        let mut tape = Tape::new();
        let h_f = self.run_direction(&mut tape, store, &[dag], &self.fwd)?;
        let reversed = dag.reversed();
        let h_b = self.run_direction(&mut tape, store, &[&reversed], &self.bwd)?;
        let h_f = tape.value(h_f).data().to_vec();
        let h_b = tape.value(h_b).data().to_vec();
        let mut combined = Vec::with_capacity(h_f.len() + h_b.len());
        combined.extend_from_slice(&h_f);
        combined.extend_from_slice(&h_b);
        Ok(GraphEmbedding { h_f, h_b, combined })
    }

    /// Forward-only readout of the forward direction.
    pub fn encode_forward(&self, store: &ParamStore, dag: &ArchDag) -> Result<Vec<f64>> {
        require_valid(dag)?;
        let mut tape = Tape::new();
        let h = self.run_direction(&mut tape, store, &[dag], &self.fwd)?;
        Ok(tape.value(h).data().to_vec())
    }
}

fn require_valid(dag: &ArchDag) -> Result<()> {
    if !is_valid(dag) {
        return Err(Error::InvalidDag {
            reason: "graph encoder requires a valid cell DAG".to_string(),
        });
    }
    Ok(())
}

/// Node processing order of the encoder for a DAG; used to assert that every
/// node is handled only after all of its predecessors.
pub fn processing_order(dag: &ArchDag) -> Vec<usize> {
    (0..dag.num_nodes()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check_params;
    use crate::rng::rng_from;
    use crate::space::{cell_to_dag, CellOp, CellSpec, EDGE_TEMPLATE, NodeType};

    fn tiny() -> (ParamStore, GraphEncoder) {
        let mut store = ParamStore::new();
        let mut rng = rng_from(31);
        let enc = GraphEncoder::new(&mut store, "ge", GraphEncoderConfig { d_h: 5 }, &mut rng).unwrap();
        (store, enc)
    }

    fn some_cell() -> CellSpec {
        CellSpec::new([
            CellOp::Conv3x3,
            CellOp::Zeroize,
            CellOp::SkipConnect,
            CellOp::AvgPool3x3,
            CellOp::Conv1x1,
            CellOp::SkipConnect,
        ])
    }

    #[test]
    fn rejects_invalid_dags() {
        let (store, enc) = tiny();
        let mut dag = cell_to_dag(&some_cell());
        dag.nodes[3] = NodeType::End;
        assert!(enc.encode_forward(&store, &dag).is_err());
        assert!(enc.encode_bidirectional(&store, &dag).is_err());
    }

    #[test]
    fn identical_dags_encode_identically_and_one_op_changes_the_embedding() {
        let (store, enc) = tiny();
        let dag = cell_to_dag(&some_cell());
        let a = enc.encode_forward(&store, &dag).unwrap();
        let b = enc.encode_forward(&store, &cell_to_dag(&some_cell())).unwrap();
        assert_eq!(a, b);

        let mut ops = some_cell().ops;
        ops[2] = CellOp::Conv3x3;
        let c = enc.encode_forward(&store, &cell_to_dag(&CellSpec::new(ops))).unwrap();
        let l2: f64 = a.iter().zip(&c).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!(l2 > 0.0);
    }

    #[test]
    fn double_reversal_restores_the_forward_embedding() {
        let (store, enc) = tiny();
        let dag = cell_to_dag(&some_cell());
        let twice = dag.reversed().reversed();
        assert_eq!(twice, dag);
        assert_eq!(
            enc.encode_forward(&store, &dag).unwrap(),
            enc.encode_forward(&store, &twice).unwrap()
        );
    }

    #[test]
    fn embedding_is_invariant_to_edge_storage_order() {
        let (store, enc) = tiny();
        let dag = cell_to_dag(&some_cell());
        let mut shuffled_edges = EDGE_TEMPLATE.to_vec();
        shuffled_edges.reverse();
        shuffled_edges.swap(0, 5);
        let dag2 = ArchDag::new(dag.nodes.clone(), shuffled_edges);
        let a = enc.encode_bidirectional(&store, &dag).unwrap();
        let b = enc.encode_bidirectional(&store, &dag2).unwrap();
        assert_eq!(a.combined, b.combined);
    }

    #[test]
    fn processing_respects_topological_order() {
        let dag = cell_to_dag(&some_cell());
        let order = processing_order(&dag);
        let position: Vec<usize> = order.clone();
        for i in &order {
            for p in dag.predecessors(*i) {
                assert!(
                    position[p] < position[*i],
                    "node {i} processed before predecessor {p}"
                );
            }
        }
    }

    #[test]
    fn combined_embedding_has_the_configured_width() {
        let (store, enc) = tiny();
        let emb = enc.encode_bidirectional(&store, &cell_to_dag(&some_cell())).unwrap();
        assert_eq!(emb.h_f.len(), 5);
        assert_eq!(emb.h_b.len(), 5);
        assert_eq!(emb.combined.len(), 10);
    }

    #[test]
    fn default_config_concatenates_to_1024() {
        let mut store = ParamStore::new();
        let mut rng = rng_from(32);
        let enc =
            GraphEncoder::new(&mut store, "ge", GraphEncoderConfig::default(), &mut rng).unwrap();
        let emb = enc.encode_bidirectional(&store, &cell_to_dag(&some_cell())).unwrap();
        assert_eq!(emb.h_f.len(), 512);
        assert_eq!(emb.combined.len(), 1024);
    }

    #[test]
    fn batched_encoding_is_bit_identical_to_single_encodings() {
        let (store, enc) = tiny();
        let cells: Vec<CellSpec> = (0..5)
            .map(|i| {
                let mut ops = some_cell().ops;
                ops[i] = CellOp::Conv1x1;
                CellSpec::new(ops)
            })
            .collect();
        let dags: Vec<ArchDag> = cells.iter().map(cell_to_dag).collect();
        let dag_refs: Vec<&ArchDag> = dags.iter().collect();
        let mut tape = Tape::new();
        let batch = enc
            .encode_bidirectional_batch_on(&mut tape, &store, &dag_refs)
            .unwrap();
        let batch_v = tape.value(batch).clone();
        assert_eq!(batch_v.shape(), &[5, 10]);
        for (b, dag) in dags.iter().enumerate() {
            let single = enc.encode_bidirectional(&store, dag).unwrap();
            for (x, y) in batch_v.row_slice(b).iter().zip(&single.combined) {
                assert_eq!(x.to_bits(), y.to_bits(), "row {b} differs from single run");
            }
        }
    }

    #[test]
    fn gradient_through_bidirectional_encoding_matches_finite_differences() {
        let (mut store, enc) = tiny();
        let dag = cell_to_dag(&some_cell());
        let err = grad_check_params(
            |tape, store| {
                let emb = enc.encode_bidirectional_on(tape, store, &dag)?;
                let sq = tape.square(emb);
                Ok(tape.sum_all(sq))
            },
            &mut store,
        )
        .unwrap();
        assert!(err < 1e-3, "rel err {err}");
    }
}
