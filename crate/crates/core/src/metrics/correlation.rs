//! Attribute-value correlation and binarized-F1 evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Pearson correlation with a two-tailed p-value.
///
/// Undefined when fewer than 3 pairs or either side has zero variance;
/// undefined is reported as absent rather than 0.
pub fn pearson_rho(xs: &[f64], ys: &[f64]) -> Result<Option<(f64, f64)>> {
    if xs.len() != ys.len() {
        return Err(Error::Validation(format!(
            "correlation over {} predictions vs {} golds",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 3 {
        return Ok(None);
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let df = nf - 2.0;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(Some((rho, p)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdOutcome {
    pub theta: f64,
    pub dev_f1: f64,
    pub test_f1: f64,
    /// Dev gold was single-class, making F1 degenerate.
    pub degenerate_dev: bool,
}

fn binary_f1(pairs: impl Iterator<Item = (bool, bool)>) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for (pred, gold) in pairs {
        match (pred, gold) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fneg) as f64;
    2.0 * p * r / (p + r)
}

fn f1_at(theta: f64, pairs: &[(f64, f64)]) -> f64 {
    binary_f1(pairs.iter().map(|&(pred, gold)| (pred > theta, gold > 0.0)))
}

/// Gold is binarized at the scale midpoint 0; the prediction threshold is
/// tuned on dev over all order-distinguishable cut points and applied to
/// test. Ties go to the smallest threshold.
pub fn tune_threshold_f1(dev: &[(f64, f64)], test: &[(f64, f64)]) -> Result<ThresholdOutcome> {
    if dev.is_empty() {
        return Err(Error::Validation("threshold tuning needs dev pairs".into()));
    }
    let positives = dev.iter().filter(|&&(_, g)| g > 0.0).count();
    let degenerate_dev = positives == 0 || positives == dev.len();
    if degenerate_dev {
        log::warn!("threshold tuning: dev gold is single-class, F1 is degenerate");
    }
    let mut preds: Vec<f64> = dev.iter().map(|&(p, _)| p).collect();
    preds.sort_by(f64::total_cmp);
    preds.dedup();
    let mut candidates = vec![f64::NEG_INFINITY];
    for w in preds.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.push(f64::INFINITY);
    let mut theta = candidates[0];
    let mut best = f64::NEG_INFINITY;
    for &c in &candidates {
        let f1 = f1_at(c, dev);
        if f1 > best {
            best = f1;
            theta = c;
        }
    }
    Ok(ThresholdOutcome {
        theta,
        dev_f1: best,
        test_f1: f1_at(theta, test),
        degenerate_dev,
    })
}

/// One semantic node's position in the sentence plus its attribute
/// predictions, gold-masked pairs only.
#[derive(Debug, Clone)]
pub struct PositionedNode {
    /// Head-token position divided by sentence length, in [0, 1].
    pub ratio: f64,
    /// (attribute, predicted value, gold value)
    pub attrs: Vec<(String, f64, f64)>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PercentileBin {
    pub n_nodes: usize,
    /// Mean over attribute types of the in-bin Pearson rho; absent when no
    /// attribute has a defined correlation here.
    pub mean_rho: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PercentileTable {
    pub bins: Vec<PercentileBin>,
}

pub fn percentile_rho(nodes: &[PositionedNode]) -> Result<PercentileTable> {
    let mut grouped: Vec<Vec<&PositionedNode>> = (0..10).map(|_| Vec::new()).collect();
    for node in nodes {
        let b = ((node.ratio * 10.0).floor() as usize).min(9);
        grouped[b].push(node);
    }
    let mut bins = Vec::with_capacity(10);
    for members in &grouped {
        let mut by_attr: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for node in members {
            for (name, pred, gold) in &node.attrs {
                let slot = by_attr.entry(name).or_default();
                slot.0.push(*pred);
                slot.1.push(*gold);
            }
        }
        let mut rhos = Vec::new();
        for (xs, ys) in by_attr.values() {
            if let Some((rho, _)) = pearson_rho(xs, ys)? {
                rhos.push(rho);
            }
        }
        bins.push(PercentileBin {
            n_nodes: members.len(),
            mean_rho: if rhos.is_empty() {
                None
            } else {
                Some(rhos.iter().sum::<f64>() / rhos.len() as f64)
            },
        });
    }
    Ok(PercentileTable { bins })
}

pub fn percentile_table_tsv(table: &PercentileTable) -> String {
    let mut out = String::from("bin\tlow\thigh\tn_nodes\tmean_rho\n");
    for (b, bin) in table.bins.iter().enumerate() {
        out.push_str(&format!(
            "{b}\t{:.1}\t{:.1}\t{}\t{}\n",
            b as f64 / 10.0,
            (b + 1) as f64 / 10.0,
            bin.n_nodes,
            bin.mean_rho.map_or("-".to_string(), |r| format!("{r:.6}"))
        ));
    }
    out
}

/// One node's attribute prediction paired with the UD relation borne by the
/// node's head token.
#[derive(Debug, Clone)]
pub struct RelationAttrSample {
    pub relation: String,
    pub attribute: String,
    pub pred: f64,
    pub gold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub rho: Option<f64>,
    pub p: Option<f64>,
    pub n: usize,
    pub significant: bool,
}

pub type Heatmap = BTreeMap<String, BTreeMap<String, HeatmapCell>>;

/// attribute -> relation -> correlation cell; relations never observed do
/// not appear. Significance requires a defined rho, p < 0.05, and n >= 3.
pub fn relation_attribute_rho(samples: &[RelationAttrSample]) -> Result<Heatmap> {
    let mut grouped: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in samples {
        let slot = grouped
            .entry((s.attribute.clone(), s.relation.clone()))
            .or_default();
        slot.0.push(s.pred);
        slot.1.push(s.gold);
    }
    let mut heatmap: Heatmap = BTreeMap::new();
    for ((attr, rel), (xs, ys)) in grouped {
        let n = xs.len();
        let cell = match pearson_rho(&xs, &ys)? {
            Some((rho, p)) => HeatmapCell {
                rho: Some(rho),
                p: Some(p),
                n,
                significant: p < 0.05 && n >= 3,
            },
            None => HeatmapCell {
                rho: None,
                p: None,
                n,
                significant: false,
            },
        };
        heatmap.entry(attr).or_default().insert(rel, cell);
    }
    Ok(heatmap)
}

pub fn heatmap_tsv(heatmap: &Heatmap) -> String {
    let mut out = String::from("attribute\trelation\tn\trho\tp\tsignificant\n");
    for (attr, row) in heatmap {
        for (rel, cell) in row {
            out.push_str(&format!(
                "{attr}\t{rel}\t{}\t{}\t{}\t{}\n",
                cell.n,
                cell.rho.map_or("-".to_string(), |r| format!("{r:.6}")),
                cell.p.map_or("-".to_string(), |p| format!("{p:.6}")),
                cell.significant
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_line_is_perfectly_correlated() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let (rho, p) = pearson_rho(&xs, &xs).unwrap().unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn negative_affine_is_anticorrelated() {
        let xs = [0.0, 1.0, 2.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x| -2.0 * x + 3.0).collect();
        let (rho, _) = pearson_rho(&xs, &ys).unwrap().unwrap();
        assert!((rho + 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_formula_on_fixed_sample() {
        let xs = [0.2, -1.3, 2.8, 0.4, -0.9, 1.7, 2.2, -2.5, 0.0, 1.1];
        let ys = [0.5, -0.8, 2.0, 1.0, -1.2, 0.9, 2.5, -1.9, 0.3, 0.6];
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let num: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum();
        let dx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>().sqrt();
        let dy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>().sqrt();
        let expect = num / (dx * dy);
        let (rho, p) = pearson_rho(&xs, &ys).unwrap().unwrap();
        assert!((rho - expect).abs() < 1e-12);
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn zero_variance_is_absent_not_zero() {
        assert!(pearson_rho(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0])
            .unwrap()
            .is_none());
        assert!(pearson_rho(&[1.0, 2.0], &[0.0, 1.0]).unwrap().is_none());
    }

    #[test]
    fn perfectly_separated_dev_reaches_f1_one() {
        let dev = [(-2.0, -1.0), (-1.5, -2.0), (1.5, 1.0), (2.0, 2.0)];
        let out = tune_threshold_f1(&dev, &dev).unwrap();
        assert_eq!(out.dev_f1, 1.0);
        assert_eq!(out.test_f1, 1.0);
        assert!(out.theta > -1.5 && out.theta < 1.5);
        assert!(!out.degenerate_dev);
    }

    #[test]
    fn constant_predictions_take_the_better_baseline() {
        // All preds equal: threshold either calls everything positive or
        // everything negative.
        let dev = [(0.5, 1.0), (0.5, 1.0), (0.5, -1.0)];
        let out = tune_threshold_f1(&dev, &dev).unwrap();
        let all_pos = binary_f1([(true, true), (true, true), (true, false)].into_iter());
        assert_eq!(out.dev_f1, all_pos);
    }

    #[test]
    fn grid_argmax_matches_dense_sweep() {
        let mut state = 0x2545F4914F6CDD1Du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 6.0 - 3.0
        };
        for _ in 0..50 {
            let dev: Vec<(f64, f64)> = (0..40).map(|_| (next(), next())).collect();
            let out = tune_threshold_f1(&dev, &dev).unwrap();
            let mut sweep_best = f64::NEG_INFINITY;
            let mut t = -3.2;
            while t <= 3.2 {
                sweep_best = sweep_best.max(f1_at(t, &dev));
                t += 1e-4;
            }
            assert!(
                (out.dev_f1 - sweep_best).abs() < 1e-12,
                "grid {} vs sweep {}",
                out.dev_f1,
                sweep_best
            );
        }
    }

    #[test]
    fn monotone_transform_leaves_dev_f1_unchanged() {
        let dev = [(0.1, 1.0), (-0.4, -1.0), (0.9, 1.0), (0.3, -2.0), (-1.2, 2.0)];
        let out = tune_threshold_f1(&dev, &dev).unwrap();
        let warped: Vec<(f64, f64)> = dev
            .iter()
            .map(|&(p, g)| ((p * 3.0).exp() + 7.0, g))
            .collect();
        let wout = tune_threshold_f1(&warped, &warped).unwrap();
        assert_eq!(out.dev_f1, wout.dev_f1);
        assert_eq!(out.test_f1, wout.test_f1);
    }

    #[test]
    fn single_class_dev_flags_degenerate() {
        let dev = [(0.1, 1.0), (0.2, 2.0), (0.3, 3.0)];
        assert!(tune_threshold_f1(&dev, &dev).unwrap().degenerate_dev);
    }

    #[test]
    fn percentile_bins_collect_by_ratio() {
        let node = |ratio: f64, pred: f64, gold: f64| PositionedNode {
            ratio,
            attrs: vec![("factuality".to_string(), pred, gold)],
        };
        // Three early nodes correlate perfectly; one late node.
        let nodes = vec![
            node(0.05, 1.0, 1.0),
            node(0.06, 2.0, 2.0),
            node(0.07, 3.0, 3.0),
            node(0.95, 1.0, 1.0),
        ];
        let table = percentile_rho(&nodes).unwrap();
        assert_eq!(table.bins[0].n_nodes, 3);
        assert_eq!(table.bins[0].mean_rho, Some(1.0));
        assert_eq!(table.bins[9].n_nodes, 1);
        assert_eq!(table.bins[9].mean_rho, None);
        let total: usize = table.bins.iter().map(|b| b.n_nodes).sum();
        assert_eq!(total, nodes.len());
    }

    #[test]
    fn percentile_means_average_over_attributes() {
        // Bin 0 holds three nodes with two attributes: one correlates at
        // +1, the other at -1, so the mean is 0.
        let mk = |pred_b: f64| PositionedNode {
            ratio: 0.0,
            attrs: vec![
                ("a".to_string(), pred_b, pred_b),
                ("b".to_string(), -pred_b, pred_b),
            ],
        };
        let nodes = vec![mk(1.0), mk(2.0), mk(3.0)];
        let table = percentile_rho(&nodes).unwrap();
        assert_eq!(table.bins[0].mean_rho, Some(0.0));
    }

    #[test]
    fn heatmap_masks_small_and_insignificant_cells() {
        let s = |rel: &str, pred: f64, gold: f64| RelationAttrSample {
            relation: rel.to_string(),
            attribute: "factuality".to_string(),
            pred,
            gold,
        };
        let samples = vec![
            s("nsubj", 1.0, 1.0),
            s("nsubj", 2.0, 2.0),
            s("nsubj", 3.0, 3.0),
            s("obj", 1.0, 1.0),
            s("obj", 2.0, 2.0),
        ];
        let map = relation_attribute_rho(&samples).unwrap();
        let row = &map["factuality"];
        assert!(row["nsubj"].significant);
        assert_eq!(row["nsubj"].rho, Some(1.0));
        assert!(!row["obj"].significant);
        assert!(!row.contains_key("iobj"));
    }
}
