//! Keras-style layer summary of a built graph.

use std::fmt::Write as _;

use serde::Serialize;

use crate::graph::Graph;
use crate::model::config::{Profile, INPUT_CHANNELS};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SummaryRow {
    pub name: String,
    pub kind: &'static str,
    /// Output shape without the batch axis.
    pub output_dims: Vec<usize>,
    pub params: usize,
    pub connected_to: Vec<String>,
    /// For the reference profile: the value the published layer table prints
    /// where it disagrees with what the network actually has.
    pub printed_in_reference: Option<String>,
}

impl SummaryRow {
    /// `(None, 223, 223, 20)`; input layers are wrapped in a list as Keras does.
    pub fn output_shape(&self) -> String {
        let dims: Vec<String> = self.output_dims.iter().map(ToString::to_string).collect();
        let shape = format!("(None, {})", dims.join(", "));
        if self.kind == "InputLayer" {
            format!("[{shape}]")
        } else {
            shape
        }
    }

    fn connected(&self) -> String {
        let quoted: Vec<String> = self.connected_to.iter().map(|c| format!("'{c}[0][0]'")).collect();
        format!("[{}]", quoted.join(", "))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub profile: Profile,
    pub rows: Vec<SummaryRow>,
    pub total_params: usize,
    pub trainable_params: usize,
    pub non_trainable_params: usize,
}

/// Cells of the published table that disagree with the network it describes.
fn reference_misprint(name: &str) -> Option<&'static str> {
    match name {
        "flatten_2" => Some("(None, 600)"),
        "conv2d_3" | "conv2d_8" => Some("10050"),
        "conv2d_4" | "conv2d_9" => Some("27000"),
        "dense_2" => Some("510"),
        _ => None,
    }
}

const REFERENCE_TRAINABLE: &str = "441,224";

pub fn summarize<T: Scalar>(g: &Graph<T>) -> Summary {
    let cfg = g.config();
    let shapes = g.branch_shapes();
    let e = cfg.input_extent;
    let mut rows = Vec::new();
    let mut push = |name: String, kind, output_dims: Vec<usize>, params, connected_to: Vec<String>| {
        let printed_in_reference = if cfg.profile == Profile::Paper {
            reference_misprint(&name).map(str::to_string)
        } else {
            None
        };
        rows.push(SummaryRow { name, kind, output_dims, params, connected_to, printed_in_reference });
    };

    let inputs = [format!("{}_input", cfg.conv_name(0, 0)), format!("{}_input", cfg.conv_name(1, 0))];
    for input in &inputs {
        push(input.clone(), "InputLayer", vec![e, e, INPUT_CHANNELS], 0, vec![]);
    }
    for stage in 0..cfg.stages() {
        for b in 0..2 {
            let spec = shapes[b].convs[stage];
            let o = shapes[b].conv_extents[stage];
            let from = if stage == 0 { inputs[b].clone() } else { cfg.pool_name(b, stage - 1) };
            push(cfg.conv_name(b, stage), "Conv2D", vec![o, o, spec.out_channels], spec.param_count(), vec![from]);
        }
        for b in 0..2 {
            let o = shapes[b].pool_extents[stage];
            let c = shapes[b].convs[stage].out_channels;
            push(cfg.pool_name(b, stage), "MaxPooling2D", vec![o, o, c], 0, vec![cfg.conv_name(b, stage)]);
        }
    }
    let last = cfg.stages() - 1;
    for b in 0..2 {
        push(
            format!("flatten_{}", b + 1),
            "Flatten",
            vec![shapes[b].flat_features()],
            0,
            vec![cfg.pool_name(b, last)],
        );
    }
    let width = g.feature_width();
    push("concatenate".into(), "Concatenate", vec![width], 0, vec!["flatten_1".into(), "flatten_2".into()]);
    push("flatten_3".into(), "Flatten", vec![width], 0, vec!["concatenate".into()]);
    let mut from = "flatten_3".to_string();
    for (i, spec) in cfg.head_specs(width).iter().enumerate() {
        let name = cfg.dense_name(i);
        push(name.clone(), "Dense", vec![spec.out_features], spec.param_count(), vec![from]);
        from = name;
    }

    let total = rows.iter().map(|r| r.params).sum();
    debug_assert_eq!(total, g.parameter_count());
    Summary { profile: cfg.profile, rows, total_params: total, trainable_params: total, non_trainable_params: 0 }
}

/// `441324` → `441,324`.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl Summary {
    pub fn row(&self, name: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Tab-separated table with a header and totals; corrected cells carry a
    /// trailing note with the reference value.
    pub fn to_text(&self) -> String {
        let mut out = String::from("Layer (Type)\tOutput Shape\tParams\tConnected to\n");
        for r in &self.rows {
            let _ = write!(out, "{} ({})\t{}\t{}\t{}", r.name, r.kind, r.output_shape(), r.params, r.connected());
            if let Some(printed) = &r.printed_in_reference {
                let _ = write!(out, "\t# reference table prints {printed}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "Total params: {}", thousands(self.total_params));
        let _ = write!(out, "Trainable params: {}", thousands(self.trainable_params));
        if self.profile == Profile::Paper {
            let _ = write!(out, "\t# reference table prints {REFERENCE_TRAINABLE}");
        }
        out.push('\n');
        let _ = writeln!(out, "Non-trainable params: {}", thousands(self.non_trainable_params));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build, ArchitectureConfig};

    #[test]
    fn paper_rows() {
        let g = build::<f32>(&ArchitectureConfig::paper(), 0).unwrap();
        let s = summarize(&g);
        assert_eq!(s.rows.len(), 28);
        let first = &s.rows[2];
        assert_eq!((first.name.as_str(), first.output_shape(), first.params), ("conv2d", "(None, 223, 223, 20)".into(), 1520));
        let b = s.row("conv2d_5").unwrap();
        assert_eq!((b.output_shape(), b.params), ("(None, 215, 215, 20)".into(), 1520));
        assert_eq!(s.total_params, 441_324);
        assert!(s.to_text().contains("Total params: 441,324"));
    }

    #[test]
    fn corrections_are_flagged() {
        let g = build::<f32>(&ArchitectureConfig::paper(), 0).unwrap();
        let s = summarize(&g);
        let flagged: Vec<_> = s.rows.iter().filter(|r| r.printed_in_reference.is_some()).map(|r| r.name.as_str()).collect();
        assert_eq!(flagged, ["conv2d_3", "conv2d_8", "conv2d_4", "conv2d_9", "flatten_2", "dense_2"]);
        assert_eq!(s.row("flatten_2").unwrap().output_shape(), "(None, 960)");
        assert_eq!(s.row("dense_2").unwrap().params, 516);
    }

    #[test]
    fn tiny_summary_has_no_reference_notes() {
        let g = build::<f32>(&ArchitectureConfig::tiny(), 0).unwrap();
        let s = summarize(&g);
        assert!(s.rows.iter().all(|r| r.printed_in_reference.is_none()));
        assert_eq!(s.row("concatenate").unwrap().output_dims, [300]);
        assert!(!s.to_text().contains('#'));
    }

    #[test]
    fn thousands_separator() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(1000), "1,000");
        assert_eq!(thousands(441_324), "441,324");
        assert_eq!(thousands(1_234_567), "1,234,567");
    }
}
