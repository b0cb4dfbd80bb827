//! Per-epoch training report.

/// One epoch of training statistics. Mask columns are absent for
/// variants without a mask path; recalls are absent when the dev set
/// lacks a gold class.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub asr_loss: f64,
    pub mask_loss: Option<f64>,
    pub total_loss: f64,
    pub dev_wer: f64,
    pub recall_0: Option<f64>,
    pub recall_1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "na".to_string(),
    }
}

impl TrainReport {
    /// Comma-separated table, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,asr_loss,mask_loss,total_loss,dev_wer,recall0,recall1\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{},{:.6},{:.6},{},{}\n",
                r.epoch,
                r.asr_loss,
                cell(r.mask_loss),
                r.total_loss,
                r.dev_wer,
                cell(r.recall_0),
                cell(r.recall_1),
            ));
        }
        out
    }
}
