use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::detection::DetectionLoss;

/// One guided denoising step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Index of the denoising step (0 = first, noisiest).
    pub step: usize,
    /// Diffusion timestep.
    pub t: usize,
    pub total_loss: f64,
    pub cls_loss: f64,
    pub reg_loss: f64,
    pub grad_norm_preclip: f64,
}

/// Per-step detection loss of a guided run, plus the loss of the final
/// composited image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GuidanceTrace {
    pub rows: Vec<TraceRow>,
    pub final_loss: Option<DetectionLoss>,
}

impl GuidanceTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.total_loss).collect()
    }

    /// Number of consecutive steps where the loss went down.
    pub fn decreases(&self) -> usize {
        self.rows
            .windows(2)
            .filter(|w| w[1].total_loss < w[0].total_loss)
            .count()
    }

    /// CSV with header `step,t,total_loss,cls_loss,reg_loss,grad_norm_preclip`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        if self.rows.is_empty() {
            wr.write_record(["step", "t", "total_loss", "cls_loss", "reg_loss", "grad_norm_preclip"])?;
        }
        for row in &self.rows {
            wr.serialize(row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> csv::Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd.deserialize().collect::<csv::Result<Vec<TraceRow>>>()?;
        Ok(Self { rows, final_loss: None })
    }
}
