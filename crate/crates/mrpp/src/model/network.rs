//! The policy networks: the CNN-only baseline and the geometric GNN. One
//! struct serves both training (batched, centralized over a whole graph) and
//! rollout (per-robot pieces that reproduce the centralized arithmetic).
//!
//! Parameter names are arch-independent for the shared parts (`encoder.*`,
//! `head.*`), so baseline comparisons can copy weights by name.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::autodiff::ops;
use crate::autodiff::{no_grad, RunningStats, Tensor};
use crate::config::{Arch, ModelConfig, PositionEncoding, ACTION_COUNT};
use crate::model::basis::Basis;
use crate::model::layers::{ActionMapper, InteractionLayer, MiniVgg, ParamReg};
use crate::percept::{ChannelMap, CommGraph, EdgeGeom};
use crate::{Error, Result};

/// Per-robot features at every depth; `levels[0]` is the encoder output,
/// `levels[h]` feeds the action mapper. Each entry is [N, F].
#[derive(Debug)]
pub struct LayerFeatures {
    pub levels: Vec<Tensor>,
}

pub struct Network {
    cfg: ModelConfig,
    encoder: MiniVgg,
    layers: Vec<InteractionLayer>,
    head: ActionMapper,
    basis: Option<Basis>,
    params: BTreeMap<String, Tensor>,
    stats: Vec<(String, Rc<RefCell<RunningStats>>)>,
}

impl Network {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut reg = ParamReg::new(cfg.init_seed);
        let encoder = MiniVgg::new(
            &mut reg,
            "encoder",
            cfg.input_d,
            &cfg.encoder_widths,
            cfg.feature_dim,
        )?;
        let (layers, basis) = match cfg.arch {
            Arch::Cnn => (Vec::new(), None),
            Arch::GeoGnn => {
                let (radial, spherical, basis) = match cfg.position_encoding {
                    PositionEncoding::None => (None, None, None),
                    PositionEncoding::Rbf => {
                        (Some(cfg.basis.n_bbf), None, Some(Basis::new(&cfg.basis)))
                    }
                    PositionEncoding::BbfSbf => (
                        Some(cfg.basis.n_bbf),
                        Some(cfg.basis.sbf_len()),
                        Some(Basis::new(&cfg.basis)),
                    ),
                };
                let layers = (0..cfg.hops)
                    .map(|l| {
                        InteractionLayer::new(
                            &mut reg,
                            &format!("layer{l}"),
                            cfg.feature_dim,
                            radial,
                            spherical,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                (layers, basis)
            }
        };
        let head = ActionMapper::new(&mut reg, "head", cfg.feature_dim, ACTION_COUNT)?;
        let (params, stats) = reg.into_parts();
        Ok(Self { cfg: cfg.clone(), encoder, layers, head, basis, params, stats })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Message-passing depth; 0 for the CNN baseline.
    pub fn hops(&self) -> usize {
        self.layers.len()
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn stats(&self) -> &[(String, Rc<RefCell<RunningStats>>)] {
        &self.stats
    }

    /// Copies every parameter and running-stat buffer whose name exists in
    /// both networks. Used to give baselines shared encoder/head weights.
    pub fn copy_shared_from(&mut self, other: &Network) {
        for (name, p) in &self.params {
            if let Some(q) = other.params.get(name) {
                p.set_data(&q.value());
            }
        }
        for (name, s) in &self.stats {
            if let Some((_, src)) = other.stats.iter().find(|(n, _)| n == name) {
                *s.borrow_mut() = src.borrow().clone();
            }
        }
    }

    /// Stacks channel maps into one batch and encodes: [N, F].
    pub fn encode_batch(&self, maps: &[&ChannelMap], training: bool) -> Result<Tensor> {
        let d = self.cfg.input_d;
        if let Some(bad) = maps.iter().find(|m| m.d != d) {
            return Err(Error::ShapeMismatch {
                op: "encode_batch",
                detail: format!("channel map d={} but model expects {d}", bad.d),
            });
        }
        let mut data = Vec::with_capacity(maps.len() * 3 * d * d);
        for m in maps {
            data.extend_from_slice(m.as_slice());
        }
        let x = Tensor::constant(data, &[maps.len(), 3, d, d])?;
        self.encoder.forward(&x, training)
    }

    /// Basis features for a list of edges, shaped [E, dim] per active gate.
    fn edge_basis(&self, edges: &[EdgeGeom]) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let e = edges.len();
        match self.cfg.position_encoding {
            PositionEncoding::None => Ok((None, None)),
            PositionEncoding::Rbf => {
                let basis = self.basis.as_ref().expect("rbf variant carries a basis");
                let mut radial = Vec::with_capacity(e * self.cfg.basis.n_bbf);
                for edge in edges {
                    radial.extend(basis.rbf(edge.r)?);
                }
                let radial = Tensor::constant(radial, &[e, self.cfg.basis.n_bbf])?;
                Ok((Some(radial), None))
            }
            PositionEncoding::BbfSbf => {
                let basis = self.basis.as_ref().expect("bbf-sbf variant carries a basis");
                let mut radial = Vec::with_capacity(e * self.cfg.basis.n_bbf);
                let mut spherical = Vec::with_capacity(e * self.cfg.basis.sbf_len());
                for edge in edges {
                    radial.extend(basis.bbf(edge.r)?);
                    spherical.extend(basis.sbf(edge.r, edge.theta)?);
                }
                let radial = Tensor::constant(radial, &[e, self.cfg.basis.n_bbf])?;
                let spherical = Tensor::constant(spherical, &[e, self.cfg.basis.sbf_len()])?;
                Ok((Some(radial), Some(spherical)))
            }
        }
    }

    /// Neighbor-message sum per node: [N, F]. Messages for node i come from
    /// edges with src = i, carrying the neighbor feature f[dst] gated by the
    /// edge geometry.
    fn aggregate(
        &self,
        layer: &InteractionLayer,
        f: &Tensor,
        graph: &CommGraph,
        n: usize,
    ) -> Result<Tensor> {
        let feature_dim = self.cfg.feature_dim;
        if graph.edges.is_empty() {
            return Tensor::constant(vec![0.0; n * feature_dim], &[n, feature_dim]);
        }
        let idx: Vec<usize> = graph.edges.iter().map(|e| e.dst).collect();
        let f_j = ops::rows(f, &idx)?;
        let (radial, spherical) = self.edge_basis(&graph.edges)?;
        let msgs = layer.message.forward(&f_j, radial.as_ref(), spherical.as_ref())?;
        let n_edges = graph.edges.len();
        let mut agg = vec![0.0; n * n_edges];
        for (e, edge) in graph.edges.iter().enumerate() {
            agg[edge.src * n_edges + e] = 1.0;
        }
        ops::matmul_const(agg, n, &msgs)
    }

    /// Whole-graph forward: encode every node, run the interaction layers,
    /// map final features to logits [N, 9]. The CNN baseline has no layers
    /// and ignores the edges.
    pub fn forward_centralized(
        &self,
        graph: &CommGraph,
        maps: &[&ChannelMap],
        training: bool,
    ) -> Result<(Tensor, LayerFeatures)> {
        let n = maps.len();
        if graph.nodes.len() != n {
            return Err(Error::ShapeMismatch {
                op: "forward_centralized",
                detail: format!("{} graph nodes vs {n} channel maps", graph.nodes.len()),
            });
        }
        if let Some(edge) = graph.edges.iter().find(|e| e.src >= n || e.dst >= n) {
            return Err(Error::ShapeMismatch {
                op: "forward_centralized",
                detail: format!("edge {}->{} out of range for {n} nodes", edge.src, edge.dst),
            });
        }
        let mut f = self.encode_batch(maps, training)?;
        let mut levels = vec![f.clone()];
        for layer in &self.layers {
            let msg_sum = self.aggregate(layer, &f, graph, n)?;
            f = layer.combine(&f, &msg_sum)?;
            levels.push(f.clone());
        }
        let logits = self.head.forward(&f)?;
        Ok((logits, LayerFeatures { levels }))
    }

    /// Encoder output for one robot's own observation, eval mode, no grad.
    /// The decentralized entry point: everything after this needs only
    /// received neighbor features.
    pub fn encode_one(&self, map: &ChannelMap) -> Result<Vec<f64>> {
        no_grad(|| Ok(self.encode_batch(&[map], false)?.value()))
    }

    /// Message from one received neighbor feature over an edge with geometry
    /// (r, theta), for interaction layer `level`.
    pub fn message_one(&self, level: usize, f_j: &[f64], r: f64, theta: f64) -> Result<Vec<f64>> {
        let layer = &self.layers[level];
        no_grad(|| {
            let f_t = Tensor::constant(f_j.to_vec(), &[1, self.cfg.feature_dim])?;
            let edge = [EdgeGeom { src: 0, dst: 0, r, theta }];
            let (radial, spherical) = self.edge_basis(&edge)?;
            Ok(layer
                .message
                .forward(&f_t, radial.as_ref(), spherical.as_ref())?
                .value())
        })
    }

    /// Residual update of one robot's feature from its summed messages.
    pub fn update_one(&self, level: usize, f_self: &[f64], msg_sum: &[f64]) -> Result<Vec<f64>> {
        let layer = &self.layers[level];
        no_grad(|| {
            let f_t = Tensor::constant(f_self.to_vec(), &[1, self.cfg.feature_dim])?;
            let m_t = Tensor::constant(msg_sum.to_vec(), &[1, self.cfg.feature_dim])?;
            Ok(layer.combine(&f_t, &m_t)?.value())
        })
    }

    /// Action logits from one robot's final feature.
    pub fn head_one(&self, f: &[f64]) -> Result<Vec<f64>> {
        no_grad(|| {
            let f_t = Tensor::constant(f.to_vec(), &[1, self.cfg.feature_dim])?;
            Ok(self.head.forward(&f_t)?.value())
        })
    }

    /// Marks batch-norm running statistics as initialized without changing
    /// them from the identity. For eval-mode use of untrained networks.
    pub fn seed_identity_stats(&self) {
        for (_, s) in &self.stats {
            let mut s = s.borrow_mut();
            if s.batches == 0 {
                s.batches = 1;
            }
        }
    }
}

/// argmax over logits; softmax is monotone so this is the paper's
/// softmax-then-argmax. Ties break to the lowest index.
pub fn action_of(logits: &[f64]) -> u8 {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_sampled;
    use crate::config::BasisConfig;
    use crate::percept::{build_channel_map, build_comm_graph};
    use crate::util::rng;
    use crate::world::{LidarScan, Point, RobotPose};
    use rand::Rng;

    fn small_cfg(arch: Arch, encoding: PositionEncoding, hops: usize) -> ModelConfig {
        ModelConfig {
            arch,
            feature_dim: 6,
            hops,
            position_encoding: encoding,
            basis: BasisConfig { cutoff: 5.0, n_bbf: 3, n_sbf_radial: 2, l_sbf_max: 1 },
            input_d: 16,
            encoder_widths: [2, 3, 4],
            init_seed: 42,
        }
    }

    /// A deterministic synthetic observation; `salt` varies the content.
    fn test_map(cfg: &ModelConfig, salt: u64) -> ChannelMap {
        let pcfg = crate::config::PerceptConfig {
            d: cfg.input_d,
            ..crate::config::PerceptConfig::default()
        };
        let mut r = rng(salt, 0x6d61_70, 0);
        let ranges: Vec<f64> = (0..360).map(|_| r.gen_range(0.5..5.0)).collect();
        let scan = LidarScan { ranges, max_range: pcfg.r_fov };
        let neighbors = vec![(1.5 + (salt % 3) as f64 * 0.4, 0.7)];
        let goal = (2.0, -1.0 + (salt % 2) as f64);
        build_channel_map(&scan, &neighbors, goal, &pcfg)
    }

    fn poses(positions: &[(f64, f64)]) -> Vec<RobotPose> {
        positions
            .iter()
            .enumerate()
            .map(|(id, &(x, y))| RobotPose {
                id,
                position: Point::new(x, y),
                goal: Point::new(x + 1.0, y),
            })
            .collect()
    }

    fn forward_logits(
        net: &Network,
        graph: &CommGraph,
        maps: &[&ChannelMap],
        training: bool,
    ) -> Vec<f64> {
        net.forward_centralized(graph, maps, training).unwrap().0.value()
    }

    #[test]
    fn isolated_node_equals_cnn_baseline_with_shared_weights() {
        // An isolated node sees empty message sums, so with inert layers
        // (zero weights, exact residual identity) the GeoGNN pipeline is the
        // CNN baseline with the same encoder and head.
        let geo = Network::new(&small_cfg(Arch::GeoGnn, PositionEncoding::BbfSbf, 2)).unwrap();
        for (name, p) in geo.params() {
            if name.starts_with("layer") {
                p.set_data(&vec![0.0; p.numel()]);
            }
        }
        let mut cnn = Network::new(&small_cfg(Arch::Cnn, PositionEncoding::BbfSbf, 2)).unwrap();
        cnn.copy_shared_from(&geo);
        let map = test_map(geo.config(), 1);
        let graph = CommGraph { nodes: vec![0], edges: vec![] };
        let a = forward_logits(&geo, &graph, &[&map], true);
        let b = forward_logits(&cnn, &graph, &[&map], true);
        assert_eq!(a, b);
    }

    #[test]
    fn cnn_baseline_ignores_edges() {
        let net = Network::new(&small_cfg(Arch::Cnn, PositionEncoding::None, 2)).unwrap();
        assert_eq!(net.hops(), 0);
        let maps: Vec<ChannelMap> = (0..2).map(|s| test_map(net.config(), s)).collect();
        let refs: Vec<&ChannelMap> = maps.iter().collect();
        let empty = CommGraph { nodes: vec![0, 1], edges: vec![] };
        let linked = build_comm_graph(&poses(&[(0.0, 0.0), (2.0, 0.0)]), 5.0).unwrap();
        assert!(!linked.edges.is_empty());
        assert_eq!(
            forward_logits(&net, &empty, &refs, true),
            forward_logits(&net, &linked, &refs, true)
        );
    }

    #[test]
    fn permutation_invariance() {
        let net = Network::new(&small_cfg(Arch::GeoGnn, PositionEncoding::BbfSbf, 2)).unwrap();
        let positions = [(0.0, 0.0), (2.0, 0.0), (0.0, 3.0), (6.0, 6.0)];
        let maps: Vec<ChannelMap> = (0..4).map(|s| test_map(net.config(), s)).collect();
        let graph = build_comm_graph(&poses(&positions), 5.0).unwrap();
        let refs: Vec<&ChannelMap> = maps.iter().collect();
        let base = forward_logits(&net, &graph, &refs, true);

        // Relabel: new node k is old node perm[k].
        let perm = [2usize, 0, 3, 1];
        let p_positions: Vec<(f64, f64)> = perm.iter().map(|&o| positions[o]).collect();
        let p_graph = build_comm_graph(&poses(&p_positions), 5.0).unwrap();
        let p_refs: Vec<&ChannelMap> = perm.iter().map(|&o| &maps[o]).collect();
        let permuted = forward_logits(&net, &p_graph, &p_refs, true);

        for (k, &o) in perm.iter().enumerate() {
            for a in 0..ACTION_COUNT {
                let diff = (permuted[k * ACTION_COUNT + a] - base[o * ACTION_COUNT + a]).abs();
                assert!(diff < 1e-9, "node {k} action {a} diff {diff}");
            }
        }
    }

    #[test]
    fn h_hop_locality_is_exact() {
        // Chain 0-1-2-3-4 with only adjacent links; h = 2. Node 0 must be
        // bitwise blind to node 3 and beyond, and sensitive to node 2.
        // Eval mode: training-mode batch norm couples the whole batch.
        let net = Network::new(&small_cfg(Arch::GeoGnn, PositionEncoding::BbfSbf, 2)).unwrap();
        net.seed_identity_stats();
        let chain = [(0.0, 0.0), (4.0, 0.0), (8.0, 0.0), (12.0, 0.0), (16.0, 0.0)];
        let graph = build_comm_graph(&poses(&chain), 5.0).unwrap();
        assert_eq!(graph.edges.len(), 8);
        let maps: Vec<ChannelMap> = (0..5).map(|s| test_map(net.config(), s)).collect();
        let refs: Vec<&ChannelMap> = maps.iter().collect();
        let base = forward_logits(&net, &graph, &refs, false);

        let probe = |changed: usize| {
            let alt = test_map(net.config(), 90 + changed as u64);
            let mut refs: Vec<&ChannelMap> = maps.iter().collect();
            refs[changed] = &alt;
            forward_logits(&net, &graph, &refs, false)
        };
        let node0 = |logits: &[f64]| logits[..ACTION_COUNT].to_vec();

        assert_eq!(node0(&probe(3)), node0(&base));
        assert_eq!(node0(&probe(4)), node0(&base));
        assert_ne!(node0(&probe(2)), node0(&base));
    }

    #[test]
    fn residual_identity_with_zero_layer_weights() {
        let net = Network::new(&small_cfg(Arch::GeoGnn, PositionEncoding::BbfSbf, 3)).unwrap();
        for (name, p) in net.params() {
            if name.starts_with("layer") {
                p.set_data(&vec![0.0; p.numel()]);
            }
        }
        let maps: Vec<ChannelMap> = (0..3).map(|s| test_map(net.config(), s)).collect();
        let refs: Vec<&ChannelMap> = maps.iter().collect();
        let graph =
            build_comm_graph(&poses(&[(0.0, 0.0), (2.0, 0.0), (0.0, 2.0)]), 5.0).unwrap();
        let (_, features) = net.forward_centralized(&graph, &refs, true).unwrap();
        assert_eq!(features.levels.len(), 4);
        let f0 = features.levels[0].value();
        for level in &features.levels[1..] {
            assert_eq!(level.value(), f0);
        }
    }

    #[test]
    fn two_identical_neighbors_double_the_message_sum() {
        let net = Network::new(&small_cfg(Arch::GeoGnn, PositionEncoding::BbfSbf, 1)).unwrap();
        let maps: Vec<ChannelMap> = vec![
            test_map(net.config(), 0),
            test_map(net.config(), 7),
            test_map(net.config(), 7),
        ];
        let refs: Vec<&ChannelMap> = maps.iter().collect();
        let f = net.encode_batch(&refs, true).unwrap();
        let edge = |dst| EdgeGeom { src: 0, dst, r: 2.0, theta: 1.1 };
        let single = CommGraph { nodes: vec![0, 1, 2], edges: vec![edge(1)] };
        let double = CommGraph { nodes: vec![0, 1, 2], edges: vec![edge(1), edge(2)] };
        let layer = &net.layers[0];
        let m1 = net.aggregate(layer, &f, &single, 3).unwrap().value();
        let m2 = net.aggregate(layer, &f, &double, 3).unwrap().value();
        for k in 0..net.config().feature_dim {
            assert_eq!(m2[k], 2.0 * m1[k]);
        }
    }

    #[test]
    fn variant_none_is_geometry_blind() {
        let net = Network::new(&small_cfg(Arch::GeoGnn, PositionEncoding::None, 2)).unwrap();
        let maps: Vec<ChannelMap> = (0..2).map(|s| test_map(net.config(), s)).collect();
        let refs: Vec<&ChannelMap> = maps.iter().collect();
        let with_geom = |r, theta| CommGraph {
            nodes: vec![0, 1],
            edges: vec![
                EdgeGeom { src: 0, dst: 1, r, theta },
                EdgeGeom { src: 1, dst: 0, r, theta },
            ],
        };
        let a = forward_logits(&net, &with_geom(1.0, 0.3), &refs, true);
        let b = forward_logits(&net, &with_geom(4.5, 2.9), &refs, true);
        assert_eq!(a, b);
    }

    #[test]
    fn variant_rbf_is_theta_blind_but_r_sensitive() {
        let net = Network::new(&small_cfg(Arch::GeoGnn, PositionEncoding::Rbf, 2)).unwrap();
        let maps: Vec<ChannelMap> = (0..2).map(|s| test_map(net.config(), s)).collect();
        let refs: Vec<&ChannelMap> = maps.iter().collect();
        let with_geom = |r, theta| CommGraph {
            nodes: vec![0, 1],
            edges: vec![
                EdgeGeom { src: 0, dst: 1, r, theta },
                EdgeGeom { src: 1, dst: 0, r, theta },
            ],
        };
        let a = forward_logits(&net, &with_geom(2.0, 0.3), &refs, true);
        let b = forward_logits(&net, &with_geom(2.0, 2.9), &refs, true);
        let c = forward_logits(&net, &with_geom(3.5, 0.3), &refs, true);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn variant_bbf_sbf_sees_both_r_and_theta() {
        let net = Network::new(&small_cfg(Arch::GeoGnn, PositionEncoding::BbfSbf, 2)).unwrap();
        let maps: Vec<ChannelMap> = (0..2).map(|s| test_map(net.config(), s)).collect();
        let refs: Vec<&ChannelMap> = maps.iter().collect();
        let with_geom = |r, theta| CommGraph {
            nodes: vec![0, 1],
            edges: vec![
                EdgeGeom { src: 0, dst: 1, r, theta },
                EdgeGeom { src: 1, dst: 0, r, theta },
            ],
        };
        let a = forward_logits(&net, &with_geom(2.0, 0.3), &refs, true);
        let b = forward_logits(&net, &with_geom(2.0, 2.9), &refs, true);
        let c = forward_logits(&net, &with_geom(3.5, 0.3), &refs, true);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn full_graph_gradients_match_finite_differences() {
        let net = Network::new(&small_cfg(Arch::GeoGnn, PositionEncoding::BbfSbf, 2)).unwrap();
        let maps: Vec<ChannelMap> = (0..4).map(|s| test_map(net.config(), s)).collect();
        let graph = build_comm_graph(
            &poses(&[(0.0, 0.0), (2.0, 0.0), (0.0, 3.0), (3.0, 3.0)]),
            5.0,
        )
        .unwrap();
        let labels = [0usize, 3, 8, 5];
        let loss = || {
            let refs: Vec<&ChannelMap> = maps.iter().collect();
            let (logits, _) = net.forward_centralized(&graph, &refs, true)?;
            ops::softmax_cross_entropy(&logits, &labels)
        };
        let tensors: Vec<Tensor> = net.params().values().cloned().collect();
        let err = grad_check_sampled(loss, &tensors, 1e-5, 3, 97).unwrap();
        assert!(err < 1e-4, "network grad check err {err}");
    }

    #[test]
    fn decentralized_rounds_match_centralized() {
        // Two linked robots, one interaction layer: per-robot arithmetic
        // (encode, exchange, message, update, head) must reproduce the
        // batched forward exactly.
        let net = Network::new(&small_cfg(Arch::GeoGnn, PositionEncoding::BbfSbf, 1)).unwrap();
        net.seed_identity_stats();
        let maps: Vec<ChannelMap> = (0..2).map(|s| test_map(net.config(), s)).collect();
        let refs: Vec<&ChannelMap> = maps.iter().collect();
        let graph = build_comm_graph(&poses(&[(0.0, 0.0), (2.5, 1.0)]), 5.0).unwrap();
        let central = forward_logits(&net, &graph, &refs, false);

        let f0: Vec<Vec<f64>> = maps.iter().map(|m| net.encode_one(m).unwrap()).collect();
        for i in 0..2 {
            let mut msg_sum = vec![0.0; net.config().feature_dim];
            for e in graph.neighbors(i) {
                let msg = net.message_one(0, &f0[e.dst], e.r, e.theta).unwrap();
                for (acc, m) in msg_sum.iter_mut().zip(&msg) {
                    *acc += m;
                }
            }
            let f1 = net.update_one(0, &f0[i], &msg_sum).unwrap();
            let logits = net.head_one(&f1).unwrap();
            assert_eq!(logits, central[i * ACTION_COUNT..(i + 1) * ACTION_COUNT].to_vec());
        }
    }

    #[test]
    fn graph_map_count_mismatch_is_an_error() {
        let net = Network::new(&small_cfg(Arch::GeoGnn, PositionEncoding::None, 1)).unwrap();
        let map = test_map(net.config(), 0);
        let graph = CommGraph { nodes: vec![0, 1], edges: vec![] };
        let err = net.forward_centralized(&graph, &[&map], true).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn action_of_argmax_and_ties() {
        assert_eq!(action_of(&[0.0, 1.0, 7.0, 9.0, 2.0, 0.0, 0.0, 0.0, 0.0]), 3);
        assert_eq!(action_of(&[1.5; 9]), 0);
        assert_eq!(action_of(&[0.0, 3.0, 3.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]), 1);

        // argmax(softmax(o)) = argmax(o): softmax is strictly monotone.
        let mut r = rng(5, 0x736d, 0);
        for _ in 0..1000 {
            let logits: Vec<f64> = (0..9).map(|_| r.gen_range(-10.0..10.0)).collect();
            let lse = {
                let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            };
            let probs: Vec<f64> = logits.iter().map(|v| (v - lse).exp()).collect();
            assert_eq!(action_of(&logits), action_of(&probs));
        }
    }
}
