use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{average_precision, GtInstance, ScoredTriplet};
use crate::error::{Error, Result};
use crate::io::{DatasetAnnotations, Taxonomy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub verb: String,
    pub object: String,
    pub gt_count: usize,
    pub predictions: usize,
    /// `None` for classes with neither instances nor predictions.
    pub ap: Option<f64>,
}

/// Per-class APs and their means over the standard class splits. A split
/// with no covered class is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_full: Option<f64>,
    pub map_rare: Option<f64>,
    pub map_nonrare: Option<f64>,
    pub map_seen: Option<f64>,
    pub map_unseen: Option<f64>,
    pub num_images: usize,
    pub num_triplets: usize,
    pub num_gt: usize,
    pub classes_evaluated: usize,
    pub per_class: Vec<ClassAp>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Split means over classes that have an AP. Seen/unseen means are only
/// reported when some class is held out.
pub fn aggregate(per_class: Vec<ClassAp>, taxonomy: &Taxonomy) -> EvalReport {
    let covered =
        |pred: &dyn Fn(usize) -> bool| mean(per_class.iter().filter(|c| pred(c.class_id)).filter_map(|c| c.ap));
    let any_heldout = taxonomy.heldout_flags.iter().any(|&h| h);
    EvalReport {
        map_full: covered(&|_| true),
        map_rare: covered(&|c| taxonomy.rare_flags[c]),
        map_nonrare: covered(&|c| !taxonomy.rare_flags[c]),
        map_seen: if any_heldout { covered(&|c| !taxonomy.heldout_flags[c]) } else { None },
        map_unseen: if any_heldout { covered(&|c| taxonomy.heldout_flags[c]) } else { None },
        num_images: 0,
        num_triplets: per_class.iter().map(|c| c.predictions).sum(),
        num_gt: per_class.iter().map(|c| c.gt_count).sum(),
        classes_evaluated: per_class.iter().filter(|c| c.ap.is_some()).count(),
        per_class,
    }
}

/// Scores `triplets` against the ground truth of `annotations`. Rare flags
/// come from `taxonomy`, which should be the training-set taxonomy.
pub fn evaluate(triplets: &[ScoredTriplet], annotations: &DatasetAnnotations, taxonomy: &Taxonomy) -> EvalReport {
    let n = taxonomy.num_hoi();
    let mut gt: Vec<Vec<GtInstance>> = vec![Vec::new(); n];
    let mut images: Vec<_> = annotations.images.iter().collect();
    images.sort_by_key(|i| i.image_id);
    for img in &images {
        for p in &img.gt_pairs {
            for &v in &p.verb_set {
                if let Some(h) = taxonomy.hoi_index(v, p.object_class) {
                    gt[h].push(GtInstance { image_id: img.image_id, human_box: p.human_box, object_box: p.object_box });
                }
            }
        }
    }
    let mut preds: Vec<Vec<&ScoredTriplet>> = vec![Vec::new(); n];
    for t in triplets {
        if t.hoi_class < n {
            preds[t.hoi_class].push(t);
        }
    }
    let per_class: Vec<ClassAp> = (0..n)
        .into_par_iter()
        .map(|c| {
            let (v, o) = taxonomy.hoi_classes[c];
            ClassAp {
                class_id: c,
                verb: taxonomy.verbs[v].clone(),
                object: taxonomy.objects[o].clone(),
                gt_count: gt[c].len(),
                predictions: preds[c].len(),
                ap: average_precision(&preds[c], &gt[c]),
            }
        })
        .collect();
    let mut report = aggregate(per_class, taxonomy);
    report.num_images = images.len();
    report
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl EvalReport {
    /// `class_id,verb,object,gt_count,ap`; excluded classes leave `ap` empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class_id,verb,object,gt_count,ap\n");
        for c in &self.per_class {
            let ap = c.ap.map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{ap}", c.class_id, csv_field(&c.verb), csv_field(&c.object), c.gt_count);
        }
        out
    }

    /// One line per split, percentages with two decimals.
    pub fn summary(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let mut s =
            format!("mAP full {}  rare {}  non-rare {}", pct(self.map_full), pct(self.map_rare), pct(self.map_nonrare));
        if self.map_seen.is_some() || self.map_unseen.is_some() {
            let _ = write!(s, "  seen {}  unseen {}", pct(self.map_seen), pct(self.map_unseen));
        }
        s
    }
}

/// Writes `<path>` (JSON) and the CSV sibling `<stem>.csv`.
pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    crate::io::write_json(path, report)?;
    let csv = path.with_extension("csv");
    std::fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))
}
