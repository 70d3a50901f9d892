//! Accuracy, loss, confusion matrices and single-image prediction.

use std::fmt;
use std::path::Path;

use crate::data::{assemble_batch, preprocess, ClassLabel, SampleSource, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ops::cross_entropy;
use crate::tensor::Tensor;

/// Published test-split accuracy of this architecture on the full
/// 15,336-image soybean weed dataset, for side-by-side reporting.
pub const REFERENCE_ACCURACY: f64 = 0.940;
/// Published test-split loss, same setting.
pub const REFERENCE_LOSS: f64 = 0.224;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Counts indexed by (true class, predicted class).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_predictions(predicted: &[usize], actual: &[usize]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::Input(format!(
                "{} predictions for {} labels",
                predicted.len(),
                actual.len()
            )));
        }
        let mut cm = Self::default();
        for (&p, &t) in predicted.iter().zip(actual) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, actual: usize, predicted: usize) -> Result<()> {
        if actual >= NUM_CLASSES || predicted >= NUM_CLASSES {
            return Err(Error::Input(format!(
                "class pair ({actual}, {predicted}) outside 0..{NUM_CLASSES}"
            )));
        }
        self.counts[actual][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> [u64; NUM_CLASSES] {
        self.counts.map(|r| r.iter().sum())
    }

    /// `trace / total`; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }
}

impl fmt::Display for ConfusionMatrix {
    /// Rows are true classes, columns predicted classes.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.counts.iter().flatten().map(|c| c.to_string().len()).max().unwrap_or(1).max(9);
        write!(f, "{:<10}", "true\\pred")?;
        for c in ClassLabel::ALL {
            write!(f, " {:>width$}", c.name())?;
        }
        writeln!(f)?;
        for (row, c) in self.counts.iter().zip(ClassLabel::ALL) {
            write!(f, "{:<10}", c.name())?;
            for n in row {
                write!(f, " {n:>width$}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    /// Mean cross-entropy over the evaluated samples.
    pub loss: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// Runs inference over `indices` of `source` in batches of `batch_size`.
/// The graph is only read.
pub fn evaluate(
    graph: &Graph<f32>,
    source: &dyn SampleSource,
    indices: &[usize],
    batch_size: usize,
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::Input("cannot evaluate an empty split".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("evaluation batch size must be positive".into()));
    }
    let mut confusion = ConfusionMatrix::default();
    let mut loss_sum = 0.0;
    for chunk in indices.chunks(batch_size) {
        let (x, y) = assemble_batch(source, chunk)?;
        let probs = graph.infer(&x)?;
        loss_sum += cross_entropy(&probs, &y)? * chunk.len() as f64;
        for (row, &i) in probs.data().chunks_exact(NUM_CLASSES).zip(chunk) {
            confusion.add(source.label(i).index(), argmax(row))?;
        }
    }
    Ok(Evaluation { loss: loss_sum / indices.len() as f64, accuracy: confusion.accuracy(), confusion })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: ClassLabel,
    pub probabilities: [f32; NUM_CLASSES],
}

/// Classifies one preprocessed `[E, E, 3]` image.
pub fn predict_image(graph: &Graph<f32>, image: &Tensor<f32>) -> Result<Prediction> {
    let &[h, w, c] = image.dims() else {
        return Err(Error::Shape(format!("image must be [H,W,C], got {:?}", image.shape())));
    };
    let batch = image.reshape(&[1, h, w, c])?;
    let probs = graph.infer(&batch)?;
    let probabilities: [f32; NUM_CLASSES] = probs.data().try_into().map_err(|_| {
        Error::Shape(format!("graph produced {} outputs, expected {NUM_CLASSES}", probs.len()))
    })?;
    Ok(Prediction { label: ClassLabel::from_index(argmax(&probabilities))?, probabilities })
}

/// Decodes, resizes, normalizes and classifies an image file.
pub fn predict(graph: &Graph<f32>, path: impl AsRef<Path>) -> Result<Prediction> {
    let image = preprocess(path, graph.config().input_extent)?;
    predict_image(graph, &image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::synthetic_dataset;
    use crate::model::config::ArchitectureConfig;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.25f32; 4]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
        assert_eq!(argmax(&[0.1, 0.2, 0.3, 0.4]), 3);
    }

    #[test]
    fn hand_enumerated_cells() {
        let cm = ConfusionMatrix::from_predictions(&[0, 0, 1, 3], &[0, 1, 1, 2]).unwrap();
        let mut want = [[0; 4]; 4];
        want[0][0] = 1;
        want[1][0] = 1;
        want[1][1] = 1;
        want[2][3] = 1;
        assert_eq!(cm.counts, want);
        assert_eq!(cm.total(), 4);
        assert_eq!(cm.accuracy(), 0.5);
    }

    #[test]
    fn identity_and_single_column() {
        let cm = ConfusionMatrix::from_predictions(&[0, 1, 2, 3], &[0, 1, 2, 3]).unwrap();
        assert_eq!(cm.trace(), 4);
        assert_eq!(cm.accuracy(), 1.0);
        let cm = ConfusionMatrix::from_predictions(&[2, 2, 2, 2], &[0, 1, 2, 3]).unwrap();
        for (r, row) in cm.counts.iter().enumerate() {
            for (c, &n) in row.iter().enumerate() {
                assert_eq!(n, u64::from(c == 2), "cell ({r},{c})");
            }
        }
    }

    #[test]
    fn accuracy_from_counts() {
        let mut cm = ConfusionMatrix::default();
        for i in 0..4 {
            cm.counts[i][i] = 9;
        }
        cm.counts[0][1] = 1;
        cm.counts[1][2] = 1;
        cm.counts[2][3] = 1;
        cm.counts[3][0] = 1;
        assert_eq!(cm.accuracy(), 0.9);
        assert_eq!(cm.row_sums(), [10; 4]);
    }

    #[test]
    fn out_of_range_class_is_rejected() {
        assert!(matches!(ConfusionMatrix::from_predictions(&[4], &[0]), Err(Error::Input(_))));
        assert!(matches!(ConfusionMatrix::from_predictions(&[0, 1], &[0]), Err(Error::Input(_))));
    }

    #[test]
    fn text_has_class_headers() {
        let cm = ConfusionMatrix::from_predictions(&[0, 1], &[0, 0]).unwrap();
        let text = cm.to_string();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].contains("broadleaf") && lines[0].contains("soybean"));
        assert_eq!(lines[1].split_whitespace().collect::<Vec<_>>(), ["broadleaf", "1", "1", "0", "0"]);
    }

    #[test]
    fn zero_weight_model_predicts_uniform() {
        let mut g = Graph::<f32>::new(&ArchitectureConfig::tiny(), 1).unwrap();
        for p in g.parameters_mut() {
            p.value.data_mut().fill(0.0);
        }
        let ds = synthetic_dataset(1, 128, 0);
        let p = predict_image(&g, &ds.image(2).unwrap()).unwrap();
        assert_eq!(p.probabilities, [0.25; 4]);
        assert_eq!(p.label, ClassLabel::Broadleaf);
    }

    #[test]
    fn evaluate_leaves_graph_untouched() {
        let g = Graph::<f32>::new(&ArchitectureConfig::tiny(), 1).unwrap();
        let before: Vec<u32> = g.flat_values().iter().map(|x| x.to_bits()).collect();
        let ds = synthetic_dataset(1, 128, 0);
        let ev = evaluate(&g, &ds, &[0, 1, 2, 3], 3).unwrap();
        assert_eq!(ev.confusion.total(), 4);
        assert_eq!(ev.confusion.row_sums(), [1; 4]);
        assert!(ev.loss > 0.0);
        let after: Vec<u32> = g.flat_values().iter().map(|x| x.to_bits()).collect();
        assert_eq!(before, after);
        assert!(matches!(evaluate(&g, &ds, &[], 2), Err(Error::Input(_))));
    }
}
