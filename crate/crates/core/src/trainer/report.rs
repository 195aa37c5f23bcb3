//! Result records and their CSV renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datagen::Split;
use crate::geometry::Alignment;
use crate::losses::LossBreakdown;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Frame-weighted mean of the weighted total over the epoch.
    pub loss: f64,
    pub three_d: f64,
    pub iso: f64,
    pub contour: f64,
    pub learning_rate: f64,
    pub skipped_batches: usize,
    /// Batches trained without the contour term because a predicted
    /// point fell behind the camera.
    pub contour_dropped: usize,
    pub seconds: f64,
    pub test_e3d: Option<f64>,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str = "epoch,loss,loss_3d,loss_iso,loss_contour,learning_rate,skipped_batches,contour_dropped,seconds,test_e3d";

    pub fn csv(history: &[Self]) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for h in history {
            let e3d = h.test_e3d.map(|v| format!("{v:.8}")).unwrap_or_default();
            writeln!(
                out,
                "{},{:.10},{:.10},{:.10},{:.10},{},{},{},{:.3},{}",
                h.epoch,
                h.loss,
                h.three_d,
                h.iso,
                h.contour,
                h.learning_rate,
                h.skipped_batches,
                h.contour_dropped,
                h.seconds,
                e3d
            )
            .unwrap();
        }
        out
    }
}

/// e3d statistics of the frames sharing one texture or light id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub id: usize,
    pub name: String,
    pub frames: usize,
    pub e3d: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub alignment: Alignment,
    pub frames: usize,
    pub e3d: f64,
    /// Population standard deviation of the per-frame errors.
    pub sigma: f64,
    pub per_frame: Vec<f64>,
    pub per_texture: Vec<GroupRow>,
    pub per_light: Vec<GroupRow>,
    /// Mean unweighted loss terms per frame.
    pub losses: LossBreakdown,
    /// Mean over frames of the mean interior Laplacian magnitude.
    pub laplacian: f64,
    /// Steady-state mean wall time of a batch-1 forward pass, excluding
    /// image decoding and the first (warm-up) frame.
    pub ms_per_frame: f64,
    pub noise_fraction: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "group,id,name,frames,e3d,sigma";

    /// One `overall` row, then one row per texture and per light.
    pub fn csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        writeln!(out, "overall,,all,{},{:.8},{:.8}", self.frames, self.e3d, self.sigma).unwrap();
        for (group, rows) in [("texture", &self.per_texture), ("light", &self.per_light)] {
            for r in rows {
                writeln!(out, "{group},{},{},{},{:.8},{:.8}", r.id, r.name, r.frames, r.e3d, r.sigma).unwrap();
            }
        }
        out
    }

    /// Human-readable summary tables.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:?} split, {} frames, alignment {:?}: e3d {:.5} ± {:.5}",
            self.split, self.frames, self.alignment, self.e3d, self.sigma
        )
        .unwrap();
        for (title, rows) in [("texture", &self.per_texture), ("light", &self.per_light)] {
            writeln!(out, "  {title:<10} {:>7} {:>10} {:>10}", "frames", "e3d", "sigma").unwrap();
            for r in rows {
                writeln!(out, "  {:<10} {:>7} {:>10.5} {:>10.5}", r.name, r.frames, r.e3d, r.sigma).unwrap();
            }
        }
        writeln!(
            out,
            "  losses: 3d {:.6} iso {:.6} contour {:.6}; laplacian {:.6}; {:.2} ms/frame",
            self.losses.three_d, self.losses.iso, self.losses.contour, self.laplacian, self.ms_per_frame
        )
        .unwrap();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub fraction: f64,
    pub e3d: f64,
    pub sigma: f64,
}

impl NoisePoint {
    pub const CSV_HEADER: &'static str = "noise_fraction,e3d,sigma";

    pub fn csv(points: &[Self]) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for p in points {
            writeln!(out, "{},{:.8},{:.8}", p.fraction, p.e3d, p.sigma).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub flags: String,
    pub init_hash: String,
    pub e3d: f64,
    pub sigma: f64,
    pub laplacian: f64,
    pub final_loss: f64,
}

impl AblationRow {
    pub const CSV_HEADER: &'static str = "losses,flags,e3d,sigma,laplacian,final_loss,init_hash";

    pub fn csv(rows: &[Self]) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in rows {
            writeln!(
                out,
                "{},\"{}\",{:.8},{:.8},{:.8},{:.8},{}",
                r.label, r.flags, r.e3d, r.sigma, r.laplacian, r.final_loss, r.init_hash
            )
            .unwrap();
        }
        out
    }
}
