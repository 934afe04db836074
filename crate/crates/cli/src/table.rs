//! Plain-text rendering of sweep results.

use hcdir_core::train_eval::{MetricsRecord, ModelKind};

pub enum Cell {
    Done(MetricsRecord),
    Failed { code: u8, message: String },
}

pub struct Row {
    pub eta: f64,
    pub model: ModelKind,
    pub cell: Cell,
}

const HEADER: [&str; 6] = ["model", "eta", "NDCG", "Rec@1", "Rec@3", "Rec@5"];

/// One row per (eta, model), grouped into single-domain and cross-domain
/// sections, columns padded to their widest entry.
pub fn render(rows: &[Row]) -> String {
    let fmt_row = |r: &Row| -> Vec<String> {
        let mut v = vec![r.model.to_string(), format!("{}", r.eta)];
        match &r.cell {
            Cell::Done(m) => v.extend([m.ndcg, m.rec1, m.rec3, m.rec5].map(|x| format!("{x:.4}"))),
            Cell::Failed { code, message } => v.push(format!("failed (exit {code}): {message}")),
        }
        v
    };
    let mut sections: Vec<(&str, Vec<Vec<String>>)> = Vec::new();
    for (title, cross) in [("Single-domain", false), ("Cross-domain", true)] {
        let mut part: Vec<&Row> = rows.iter().filter(|r| r.model.is_cross_domain() == cross).collect();
        let order = |m: ModelKind| ModelKind::ALL.iter().position(|&x| x == m);
        part.sort_by(|a, b| a.eta.total_cmp(&b.eta).then(order(a.model).cmp(&order(b.model))));
        if !part.is_empty() {
            sections.push((title, part.into_iter().map(fmt_row).collect()));
        }
    }
    let mut width = HEADER.map(str::len);
    for (_, body) in &sections {
        for r in body {
            // A failure message spans the metric columns and is not padded.
            for (w, c) in width.iter_mut().zip(r).take(if r.len() == 6 { 6 } else { 2 }) {
                *w = (*w).max(c.len());
            }
        }
    }
    let line = |cells: &[String]| -> String {
        let mut s = String::from("  ");
        for (k, c) in cells.iter().enumerate() {
            if k > 0 {
                s.push_str("  ");
            }
            match width.get(k) {
                Some(&w) if k < 2 => s.push_str(&format!("{c:<w$}")),
                Some(&w) if cells.len() == 6 => s.push_str(&format!("{c:>w$}")),
                _ => s.push_str(c),
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(&HEADER.map(String::from));
    out.push('\n');
    for (title, body) in sections {
        out.push_str(title);
        out.push('\n');
        for r in body {
            out.push_str(&line(&r));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use hcdir_core::train_eval::MetricSummary;

    fn done(eta: f64, model: ModelKind, ndcg: f64) -> Row {
        let m = MetricSummary {
            ndcg,
            rec1: 0.1,
            rec3: 0.2,
            rec5: 0.3,
            users: 10,
        };
        Row {
            eta,
            model,
            cell: Cell::Done(MetricsRecord::new(eta, model.name(), &m, 0, 1.0)),
        }
    }

    #[test]
    fn rows_group_by_domain_and_align() {
        let mut rows = Vec::new();
        for eta in [1.0, 0.1, 0.5, 0.2] {
            rows.push(done(eta, ModelKind::Hcdir, 0.5));
            rows.push(done(eta, ModelKind::Bpr, 0.4));
        }
        rows.push(Row {
            eta: 0.1,
            model: ModelKind::EmcdrGru,
            cell: Cell::Failed {
                code: 3,
                message: "training diverged".into(),
            },
        });
        let t = render(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[1], "Single-domain");
        assert_eq!(lines[6], "Cross-domain");
        assert_eq!(lines.len(), 1 + (1 + 4) + (1 + 5));
        assert!(lines[2].starts_with("  bpr        0.1  0.4000"), "{t}");
        assert!(lines[7].contains("emcdr-gru") && lines[7].contains("failed (exit 3)"), "{t}");
        // Metric columns line up across sections.
        let col = |l: &str| l.find("0.").unwrap();
        assert_eq!(col(lines[2]), col(lines[8]));
        assert_eq!(lines[0].len(), lines[2].len());
    }
}
