//! Text and CSV reports.

use std::collections::BTreeMap;
use std::fmt::Write;

use fxq_core::qlayers::DeployModel;
use fxq_core::resource::EbopsReport;
use serde::{Deserialize, Serialize};

/// `key=value` lines, one per figure of merit, followed by per-layer lines.
pub fn ebops_text(r: &EbopsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ebops={}", r.total);
    let _ = writeln!(s, "mul_ebops={}", r.mul_ebops);
    let _ = writeln!(s, "add_ebops={}", r.add_ebops);
    let _ = writeln!(s, "csd_weighted_ebops={}", r.csd_weighted_ebops);
    let _ = writeln!(s, "lut_pred={:.3}", r.lut_pred);
    let _ = writeln!(s, "lut_plus_{}dsp_pred={:.3}", r.dsp_coefficient, r.lut_plus_55dsp_pred);
    for (i, l) in r.layers.iter().enumerate() {
        let _ = writeln!(s, "layer{i}.mul={} layer{i}.add={} layer{i}.csd_weighted={}", l.mul, l.add, l.csd_weighted);
    }
    s
}

/// Count of elements per bit-width.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BitHistogram {
    pub counts: BTreeMap<u32, usize>,
}

impl BitHistogram {
    pub fn from_widths(widths: impl IntoIterator<Item = u32>) -> Self {
        let mut counts = BTreeMap::new();
        for w in widths {
            *counts.entry(w).or_insert(0) += 1;
        }
        Self { counts }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn zero_fraction(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.counts.get(&0).copied().unwrap_or(0) as f64 / t as f64
        }
    }

    /// One line per width from 0 to the maximum, with a bar scaled to 40
    /// characters. The 0-bit bin is always shown.
    pub fn render(&self, title: &str) -> String {
        let mut s = format!("{title} ({} elements)\n", self.total());
        let max_w = self.counts.keys().last().copied().unwrap_or(0);
        let peak = self.counts.values().copied().max().unwrap_or(0).max(1);
        for w in 0..=max_w {
            let c = self.counts.get(&w).copied().unwrap_or(0);
            let bar = "#".repeat((c * 40).div_ceil(peak));
            let _ = writeln!(s, "{w:>3} bits | {c:>6} {bar}");
        }
        s
    }
}

pub fn weight_widths(m: &DeployModel) -> BitHistogram {
    BitHistogram::from_widths(m.layers.iter().flat_map(|l| l.weight_fmt.iter().map(|f| f.width())))
}

/// Widths of the network input and every layer output lane.
pub fn activation_widths(m: &DeployModel) -> BitHistogram {
    let acts = m.layers.iter().flat_map(|l| l.act_fmt.iter());
    BitHistogram::from_widths(m.input_fmt.iter().chain(acts).map(|f| f.width()))
}

/// One line of the accuracy-versus-EBOPs table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub label: String,
    pub epoch: usize,
    pub val_metric: f64,
    pub ebops: f64,
    pub surrogate_ebops: f64,
    pub lut_pred: f64,
    pub pruned_fraction: f64,
    pub checkpoint: String,
}

pub fn write_csv<T: Serialize>(rows: &[T]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
