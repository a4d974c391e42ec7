use std::fmt::Write;

use crate::faults::RecoveryReport;

/// One line of `metrics.csv`, emitted after every round.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub global_test_accuracy: f64,
    pub global_test_loss: f64,
    pub sampled_node_count: usize,
    pub skipped: bool,
    pub round_update_bytes: u64,
    pub cumulative_update_bytes: u64,
    pub faulted_node_accuracy: Option<f64>,
    /// Counterfactual: the reporting nodes ship their views instead of deltas.
    pub round_raw_data_bytes: u64,
    pub cumulative_raw_data_bytes: u64,
}

pub const METRICS_HEADER: &str = "round,global_test_accuracy,global_test_loss,sampled_node_count,skipped,round_update_bytes,cumulative_update_bytes,faulted_node_accuracy";
pub const RECOVERY_HEADER: &str =
    "strategy,accuracy_at_recovery,epochs_to_threshold,threshold_accuracy,pre_fault_accuracy";
pub const COMMUNICATION_HEADER: &str =
    "round,sampled_node_count,round_update_bytes,round_raw_data_bytes,cumulative_update_bytes,cumulative_raw_data_bytes";
pub const CURVES_HEADER: &str = "strategy,epoch,accuracy";

fn real(v: f64) -> String {
    format!("{v:.6}")
}

pub fn emit_metrics_csv(rows: &[MetricsRow]) -> Vec<u8> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.round,
            real(r.global_test_accuracy),
            real(r.global_test_loss),
            r.sampled_node_count,
            r.skipped,
            r.round_update_bytes,
            r.cumulative_update_bytes,
            r.faulted_node_accuracy.map(real).unwrap_or_default(),
        );
    }
    out.into_bytes()
}

pub fn emit_communication_csv(rows: &[MetricsRow]) -> Vec<u8> {
    let mut out = String::from(COMMUNICATION_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.round,
            r.sampled_node_count,
            r.round_update_bytes,
            r.round_raw_data_bytes,
            r.cumulative_update_bytes,
            r.cumulative_raw_data_bytes,
        );
    }
    out.into_bytes()
}

pub fn emit_recovery_csv(reports: &[RecoveryReport]) -> Vec<u8> {
    let mut out = String::from(RECOVERY_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.strategy.name(),
            real(r.accuracy_at_recovery),
            r.epochs_to_threshold
                .map_or_else(|| "unreached".to_string(), |e| e.to_string()),
            real(r.threshold_accuracy),
            real(r.pre_fault_accuracy),
        );
    }
    out.into_bytes()
}

pub fn emit_curves_csv(reports: &[RecoveryReport]) -> Vec<u8> {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for r in reports {
        for (epoch, acc) in r.curve.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", r.strategy.name(), epoch, real(*acc));
        }
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faults::RecoveryKind;

    fn row(round: usize) -> MetricsRow {
        MetricsRow {
            round,
            global_test_accuracy: 0.5,
            global_test_loss: 1.25,
            sampled_node_count: 3,
            skipped: false,
            round_update_bytes: 300,
            cumulative_update_bytes: 300 * (round as u64 + 1),
            faulted_node_accuracy: None,
            round_raw_data_bytes: 900,
            cumulative_raw_data_bytes: 900 * (round as u64 + 1),
        }
    }

    #[test]
    fn empty_rows_header_only() {
        assert_eq!(
            emit_metrics_csv(&[]),
            format!("{METRICS_HEADER}\n").into_bytes()
        );
    }

    #[test]
    fn formatting_contract() {
        let mut skipped = row(1);
        skipped.skipped = true;
        skipped.sampled_node_count = 0;
        skipped.round_update_bytes = 0;
        let mut tracked = row(2);
        tracked.faulted_node_accuracy = Some(0.25);
        let text = String::from_utf8(emit_metrics_csv(&[row(0), skipped, tracked])).unwrap();
        let lines: Vec<&str> = text.split('\n').collect();
        assert_eq!(lines[1], "0,0.500000,1.250000,3,false,300,300,");
        assert_eq!(lines[2], "1,0.500000,1.250000,0,true,0,600,");
        assert_eq!(lines[3], "2,0.500000,1.250000,3,false,300,900,0.250000");
        assert_eq!(lines[4], "");
        assert!(!text.contains('\r'));
    }

    #[test]
    fn recovery_rows() {
        let r = RecoveryReport {
            strategy: RecoveryKind::FederatedPush,
            accuracy_at_recovery: 0.9,
            epochs_to_threshold: Some(0),
            threshold_accuracy: 0.81,
            pre_fault_accuracy: 0.9,
            curve: vec![0.9, 0.95],
        };
        let scratch = RecoveryReport {
            strategy: RecoveryKind::RetrainScratch,
            epochs_to_threshold: None,
            ..r.clone()
        };
        let text = String::from_utf8(emit_recovery_csv(&[r.clone(), scratch])).unwrap();
        assert_eq!(
            text,
            format!("{RECOVERY_HEADER}\nfederated_push,0.900000,0,0.810000,0.900000\nretrain_scratch,0.900000,unreached,0.810000,0.900000\n")
        );
        let curves = String::from_utf8(emit_curves_csv(&[r])).unwrap();
        assert!(curves.ends_with("federated_push,1,0.950000\n"));
    }
}
