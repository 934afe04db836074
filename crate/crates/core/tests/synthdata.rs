use std::collections::BTreeMap;
use std::path::Path;

use hcdir_core::analytics::{ask_buy_counts, calibration, ATTRIBUTION_WINDOW};
use hcdir_core::dataset::Dataset;
use hcdir_core::graph::NodeType;
use hcdir_core::synthdata::{describe, generate, GenConfig, GroundTruth, MONTH};
use hcdir_core::tensor::cosine;
use statrs::distribution::{ContinuousCDF, Normal};

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn build(cfg: &GenConfig) -> (tempfile::TempDir, GroundTruth, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    let gt = generate(cfg, dir.path()).unwrap();
    let ds = Dataset::load(dir.path()).unwrap();
    (dir, gt, ds)
}

#[test]
fn same_seed_gives_byte_identical_directories() {
    let cfg = GenConfig {
        users: 400,
        agents: 40,
        seed: 11,
        ..GenConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(&cfg, a.path()).unwrap();
    generate(&cfg, b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() >= 9);
    assert_eq!(fa, fb);

    let c = tempfile::tempdir().unwrap();
    generate(&GenConfig { seed: 12, ..cfg }, c.path()).unwrap();
    assert_ne!(fa["purchase.tsv"], files(c.path())["purchase.tsv"]);
}

#[test]
fn describe_reports_config_counts_and_sparse_targets() {
    let cfg = GenConfig::default();
    let dir = tempfile::tempdir().unwrap();
    generate(&cfg, dir.path()).unwrap();
    let r = describe(dir.path()).unwrap();
    assert_eq!(r.node_counts.len(), 4);
    assert_eq!(r.relation_edges.len(), 6);
    assert_eq!(r.node_counts["user"], cfg.users);
    assert_eq!(r.node_counts["agent"], cfg.agents);
    assert_eq!(r.node_counts["item"], cfg.target_items);
    assert_eq!(r.node_counts["property"], cfg.properties);
    assert_eq!(r.source_items, cfg.source_items);
    assert!(r.target_sparsity < 0.05, "{}", r.target_sparsity);
    assert!(r.overlap_users > 0);

    std::fs::remove_file(dir.path().join("possess.tsv")).unwrap();
    let err = describe(dir.path()).unwrap_err().to_string();
    assert!(err.contains("possess.tsv"), "{err}");
}

/// Ridge regression `features -> z_u` by the normal equations.
fn ridge_r2(x: &[Vec<f64>], y: &[Vec<f64>], lambda: f64) -> f64 {
    let d = x[0].len() + 1;
    let k = y[0].len();
    let row = |v: &[f64]| -> Vec<f64> { std::iter::once(1.0).chain(v.iter().copied()).collect() };
    let mut a = vec![vec![0.0; d + k]; d];
    for (xi, yi) in x.iter().zip(y) {
        let r = row(xi);
        for i in 0..d {
            for j in 0..d {
                a[i][j] += r[i] * r[j];
            }
            for j in 0..k {
                a[i][d + j] += r[i] * yi[j];
            }
        }
    }
    for (i, ai) in a.iter_mut().enumerate().skip(1) {
        ai[i] += lambda;
    }
    for c in 0..d {
        let p = (c..d).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        let pv = a[c][c];
        a[c].iter_mut().for_each(|v| *v /= pv);
        for i in 0..d {
            if i != c {
                let f = a[i][c];
                let pivot = a[c].clone();
                a[i].iter_mut().zip(&pivot).for_each(|(v, q)| *v -= f * q);
            }
        }
    }
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for j in 0..k {
        let mean = y.iter().map(|v| v[j]).sum::<f64>() / y.len() as f64;
        for (xi, yi) in x.iter().zip(y) {
            let pred: f64 = row(xi).iter().enumerate().map(|(i, r)| r * a[i][d + j]).sum();
            ss_res += (yi[j] - pred).powi(2);
            ss_tot += (yi[j] - mean).powi(2);
        }
    }
    1.0 - ss_res / ss_tot
}

#[test]
fn user_features_recover_latents() {
    let (_dir, gt, ds) = build(&GenConfig::default());
    let feats = ds.graph.features(NodeType::User).unwrap();
    let x: Vec<Vec<f64>> = (0..feats.rows()).map(|r| feats.row(r).to_vec()).collect();
    let r2 = ridge_r2(&x, &gt.user_latents, 1.0);
    assert!(r2 > 0.9, "R^2 = {r2}");
}

#[test]
fn source_and_target_behaviour_share_direction() {
    // Enough users for 1000 with history in both domains.
    let (_dir, gt, ds) = build(&GenConfig {
        users: 4000,
        ..GenConfig::default()
    });
    let k = gt.config.latent_dim;
    let mean_of = |ids: &mut dyn Iterator<Item = usize>, table: &[Vec<f64>]| -> Option<Vec<f64>> {
        let mut acc = vec![0.0; k];
        let mut n = 0.0;
        for i in ids {
            acc.iter_mut().zip(&table[i]).for_each(|(a, x)| *a += x);
            n += 1.0;
        }
        (n > 0.0).then(|| acc.into_iter().map(|a| a / n).collect())
    };
    let targets = ds.target_items();
    let mut cos = Vec::new();
    for u in 0..ds.n_users() {
        let s = mean_of(&mut ds.source_seqs[u].iter().copied(), &gt.source_item_latents);
        let t = mean_of(&mut targets[u].iter().copied(), &gt.item_latents);
        if let (Some(s), Some(t)) = (s, t) {
            cos.push(cosine(&s, &t));
        }
        if cos.len() == 1000 {
            break;
        }
    }
    assert_eq!(cos.len(), 1000);
    let mean = cos.iter().sum::<f64>() / cos.len() as f64;
    let sd = (cos.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 999.0).sqrt();
    assert!(mean > 3.0 * sd / 1000f64.sqrt(), "mean cosine {mean}, sd {sd}");
}

#[test]
fn removing_agents_lowers_purchase_probability_of_well_served_users() {
    let (_dir, gt, _ds) = build(&GenConfig::default());
    let mut q = gt.agent_quality.clone();
    q.sort_by(f64::total_cmp);
    let cut = q[q.len() * 9 / 10];
    let users: Vec<usize> = (0..gt.user_agent.len())
        .filter(|&u| gt.agent_quality[gt.user_agent[u]] >= cut)
        .collect();
    assert!(users.len() > 50);
    let total = |with: bool| -> f64 {
        users
            .iter()
            .map(|&u| (0..gt.item_latents.len()).map(|i| gt.expected_purchase_probability(u, i, with)).sum::<f64>())
            .sum()
    };
    assert!(total(false) < total(true), "{} vs {}", total(false), total(true));
}

#[test]
fn null_agent_effect_gives_equal_ask_buy_ratios() {
    let cfg = GenConfig {
        agent_effect: 0.0,
        ..GenConfig::default()
    };
    let (_dir, _gt, ds) = build(&cfg);
    let w = Some(ATTRIBUTION_WINDOW);
    let (b1, n1) = ask_buy_counts(cfg.agents, &ds.consults, &ds.purchases, 0.0, 0.05, w).unwrap();
    let (b2, n2) = ask_buy_counts(cfg.agents, &ds.consults, &ds.purchases, 0.10, 0.15, w).unwrap();
    let (p1, p2) = (b1 as f64 / n1 as f64, b2 as f64 / n2 as f64);
    let pooled = (b1 + b2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let z = (p1 - p2) / se;
    let p = 2.0 * (1.0 - Normal::new(0.0, 1.0).unwrap().cdf(z.abs()));
    assert!(p > 0.05, "z {z}, p {p} ({b1}/{n1} vs {b2}/{n2})");
}

#[test]
fn default_calibration_targets() {
    let (_dir, _gt, ds) = build(&GenConfig::default());
    let c = calibration(&ds, MONTH).unwrap();
    assert!((3.5..=6.5).contains(&c.band_ratio), "{c:?}");
    assert_eq!(c.group_buy.len(), GenConfig::default().months);
    assert!(c.returning_lead_every_month(), "{c:?}");
}
