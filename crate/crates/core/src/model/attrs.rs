//! Scalar attribute regression and applicability prediction on generated
//! nodes and edges.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::rng::RngPool;
use crate::tensor::{xavier_uniform, Axis, Tensor};

use super::config::ModelConfig;
use super::layers::{collect, Linear};

/// Per-node attribute head: values are unbounded here and clamped to the
/// annotation range only when a graph is assembled.
#[derive(Debug, Clone)]
pub struct NodeAttrHead {
    pub trunk: Linear,
    pub value: Linear,
    pub mask: Linear,
}

impl NodeAttrHead {
    pub fn new(cfg: &ModelConfig, n_attrs: usize, pool: &RngPool) -> NodeAttrHead {
        NodeAttrHead {
            trunk: Linear::new(cfg.d_s, cfg.d_h, pool, "node_attr.trunk"),
            value: Linear::new(cfg.d_h, n_attrs, pool, "node_attr.value"),
            mask: Linear::new(cfg.d_h, n_attrs, pool, "node_attr.mask"),
        }
    }

    /// (values, applicability logits), both (n, n_attrs).
    pub fn forward(&self, nodes: &Tensor) -> Result<(Tensor, Tensor)> {
        let h = self.trunk.forward(nodes)?.relu();
        Ok((self.value.forward(&h)?, self.mask.forward(&h)?))
    }

    pub fn params(&self, out: &mut BTreeMap<String, Tensor>) {
        self.trunk.params("node_attr.trunk", out);
        self.value.params("node_attr.value", out);
        self.mask.params("node_attr.mask", out);
    }
}

/// Edge attributes depend on both endpoints: the dependent's row is gated
/// coordinate-wise by a projection of its head's row.
#[derive(Debug, Clone)]
pub struct EdgeAttrHead {
    pub u: Tensor,
    pub root_z: Tensor,
    pub trunk: Linear,
    pub value: Linear,
    pub mask: Linear,
}

impl EdgeAttrHead {
    pub fn new(cfg: &ModelConfig, n_attrs: usize, pool: &RngPool) -> EdgeAttrHead {
        let d = cfg.d_s;
        EdgeAttrHead {
            u: xavier_uniform(d, d, &mut pool.stream("init.edge_attr.u")),
            root_z: xavier_uniform(1, d, &mut pool.stream("init.edge_attr.root_z")),
            trunk: Linear::new(d, cfg.d_h, pool, "edge_attr.trunk"),
            value: Linear::new(cfg.d_h, n_attrs, pool, "edge_attr.value"),
            mask: Linear::new(cfg.d_h, n_attrs, pool, "edge_attr.mask"),
        }
    }

    /// One row per node; `heads[i]` indexes the incoming edge's head among
    /// [root, node 1, ..., node n].
    pub fn forward(&self, nodes: &Tensor, heads: &[usize]) -> Result<(Tensor, Tensor)> {
        let all = Tensor::concat(&[self.root_z.clone(), nodes.clone()], Axis::Rows)?;
        let head_reps = all.embed(heads)?;
        let gated = head_reps.matmul(&self.u)?.mul(nodes)?;
        let h = self.trunk.forward(&gated)?.relu();
        Ok((self.value.forward(&h)?, self.mask.forward(&h)?))
    }

    pub fn params(&self, out: &mut BTreeMap<String, Tensor>) {
        collect(out, "edge_attr.u", &self.u);
        collect(out, "edge_attr.root_z", &self.root_z);
        self.trunk.params("edge_attr.trunk", out);
        self.value.params("edge_attr.value", out);
        self.mask.params("edge_attr.mask", out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck_named, GradcheckOptions};

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_s: 10,
            d_h: 6,
            ..Default::default()
        }
    }

    #[test]
    fn node_head_shapes_follow_the_inventory() {
        let pool = RngPool::new(1);
        let head = NodeAttrHead::new(&cfg(), 4, &pool);
        let nodes = xavier_uniform(5, 10, &mut pool.stream("n"));
        let (v, m) = head.forward(&nodes).unwrap();
        assert_eq!(v.shape(), (5, 4));
        assert_eq!(m.shape(), (5, 4));
    }

    #[test]
    fn edge_outputs_change_with_the_head_choice() {
        let pool = RngPool::new(2);
        let head = EdgeAttrHead::new(&cfg(), 3, &pool);
        let nodes = xavier_uniform(4, 10, &mut pool.stream("n"));
        let (v1, _) = head.forward(&nodes, &[0, 1, 1, 2]).unwrap();
        let (v2, _) = head.forward(&nodes, &[0, 1, 2, 2]).unwrap();
        let (a, b) = (v1.to_vec(), v2.to_vec());
        assert_eq!(a[..6], b[..6]);
        assert_ne!(a[6..9], b[6..9]);
        assert_eq!(a[9..], b[9..]);
    }

    #[test]
    fn root_vector_feeds_root_attached_edges() {
        let pool = RngPool::new(3);
        let head = EdgeAttrHead::new(&cfg(), 2, &pool);
        let nodes = xavier_uniform(2, 10, &mut pool.stream("n"));
        let (v, _) = head.forward(&nodes, &[0, 0]).unwrap();
        v.mean().backward().unwrap();
        assert!(head.root_z.grad().is_some());
        // With no root-attached edge in the loss, the root vector's
        // gradient is identically zero.
        head.root_z.zero_grad();
        let (v, _) = head.forward(&nodes, &[0, 1]).unwrap();
        let picked = v.slice(1, 2, 0, 2).unwrap();
        picked.mean().backward().unwrap();
        let g = head.root_z.grad().unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bilinear_gate_gradients_check_out() {
        let pool = RngPool::new(4);
        let head = EdgeAttrHead::new(&cfg(), 3, &pool);
        let nodes = xavier_uniform(4, 10, &mut pool.stream("n"));
        let gold = vec![0.5; 12];
        let mask = vec![1.0; 12];
        let mut params = BTreeMap::new();
        head.params(&mut params);
        let mut inputs: Vec<(&str, &Tensor)> =
            params.iter().map(|(k, v)| (k.as_str(), v)).collect();
        inputs.push(("nodes", &nodes));
        let report = gradcheck_named(
            || {
                let (v, m) = head.forward(&nodes, &[0, 1, 0, 3])?;
                let a = v.mse(&gold, Some(&mask))?;
                let b = m.bce_with_logits(&gold, Some(&mask))?;
                Ok(a.add(&b)?.mean())
            },
            &inputs,
            &GradcheckOptions::default(),
        )
        .unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
    }
}
