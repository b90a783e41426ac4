//! Metrics over logits and partitions: per-bucket confidence statistics,
//! teacher–student logit correlation disparity, and augmentation cost
//! accounting. Emitted as JSON-lines for machines and CSV/plain tables for
//! everything else.

use serde::Serialize;

use crate::energy::{boundary_count, Bucket, PartitionPlan};
use crate::error::{Error, Result};
use crate::num::{self, Matrix, Vector};

/// Confidence statistics of one bucket at T=1 softmax. Means are `None` for
/// an empty bucket (r = 0.5 leaves ELSE empty).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketStats {
    pub bucket: String,
    pub count: usize,
    pub mean_max_prob: Option<f64>,
    pub mean_entropy: Option<f64>,
    /// Class-averaged prediction vector; sums to 1 when the bucket is
    /// non-empty.
    pub mean_prediction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketConfidenceStats {
    pub low: BucketStats,
    pub else_: BucketStats,
    pub high: BucketStats,
}

impl BucketConfidenceStats {
    pub fn get(&self, bucket: Bucket) -> &BucketStats {
        match bucket {
            Bucket::Low => &self.low,
            Bucket::Else => &self.else_,
            Bucket::High => &self.high,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket,count,mean_max_prob,mean_entropy,mean_prediction\n");
        for stats in [&self.low, &self.else_, &self.high] {
            let pred = stats
                .mean_prediction
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(":");
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                stats.bucket,
                stats.count,
                stats.mean_max_prob.map(|v| v.to_string()).unwrap_or_default(),
                stats.mean_entropy.map(|v| v.to_string()).unwrap_or_default(),
                pred
            ));
        }
        out
    }
}

/// Mean max-softmax probability, mean entropy, and mean prediction vector
/// per bucket, at T=1.
pub fn bucket_confidence(logits: &Matrix, plan: &PartitionPlan) -> Result<BucketConfidenceStats> {
    if plan.len() != logits.rows() {
        return Err(Error::IdMismatch(format!(
            "plan covers {} samples, logits have {} rows",
            plan.len(),
            logits.rows()
        )));
    }
    let k = logits.cols();
    let mut acc: std::collections::HashMap<Bucket, (usize, f64, f64, Vec<f64>)> =
        std::collections::HashMap::new();
    for bucket in [Bucket::Low, Bucket::Else, Bucket::High] {
        acc.insert(bucket, (0, 0.0, 0.0, vec![0.0; k]));
    }
    for i in 0..logits.rows() {
        let bucket = plan.bucket_of(i as u64)?;
        let z = Vector::new(logits.row(i).to_vec())?;
        let probs = num::softmax_t(&z, 1.0)?;
        let entry = acc.get_mut(&bucket).unwrap();
        entry.0 += 1;
        entry.1 += probs[num::argmax(&probs)];
        entry.2 += num::entropy(&probs);
        for (slot, &p) in entry.3.iter_mut().zip(probs.iter()) {
            *slot += p;
        }
    }
    let finish = |bucket: Bucket, acc: &std::collections::HashMap<_, (usize, f64, f64, Vec<f64>)>| {
        let (count, max_sum, ent_sum, pred_sum) = acc.get(&bucket).unwrap();
        let n = *count;
        BucketStats {
            bucket: bucket.to_string(),
            count: n,
            mean_max_prob: (n > 0).then(|| max_sum / n as f64),
            mean_entropy: (n > 0).then(|| ent_sum / n as f64),
            mean_prediction: if n > 0 {
                pred_sum.iter().map(|v| v / n as f64).collect()
            } else {
                Vec::new()
            },
        }
    };
    Ok(BucketConfidenceStats {
        low: finish(Bucket::Low, &acc),
        else_: finish(Bucket::Else, &acc),
        high: finish(Bucket::High, &acc),
    })
}

/// Entrywise |corr_S − corr_T| of the two models' K×K Pearson logit
/// correlation matrices. Symmetric, zero diagonal, entries in [0, 2];
/// smaller means the student mimics the teacher more closely.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationDisparity {
    pub matrix: Matrix,
    /// Mean off-diagonal entry.
    pub mean_off_diagonal: f64,
}

impl CorrelationDisparity {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.matrix.rows() {
            let row = self
                .matrix
                .row(i)
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&row);
            out.push('\n');
        }
        out
    }
}

/// Pearson correlation matrix of the K logit columns across samples.
fn correlation_matrix(logits: &Matrix) -> Result<Matrix> {
    let n = logits.rows();
    let k = logits.cols();
    if n < 2 {
        return Err(Error::EmptyInput);
    }
    let mut means = vec![0.0; k];
    for i in 0..n {
        for (m, &v) in means.iter_mut().zip(logits.row(i).iter()) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    // Sums of squared deviations and cross products.
    let mut ssd = vec![0.0; k];
    let mut cross = vec![0.0; k * k];
    for i in 0..n {
        let row = logits.row(i);
        for a in 0..k {
            let da = row[a] - means[a];
            ssd[a] += da * da;
            for b in (a + 1)..k {
                cross[a * k + b] += da * (row[b] - means[b]);
            }
        }
    }
    for (col, &s) in ssd.iter().enumerate() {
        if s == 0.0 {
            return Err(Error::DegenerateColumn(col));
        }
    }
    let mut corr = Matrix::zeros(k, k);
    for a in 0..k {
        corr.row_mut(a)[a] = 1.0;
        for b in (a + 1)..k {
            let c = cross[a * k + b] / (ssd[a].sqrt() * ssd[b].sqrt());
            corr.row_mut(a)[b] = c;
            corr.row_mut(b)[a] = c;
        }
    }
    Ok(corr)
}

/// Disparity between a student's and a teacher's logit correlation
/// structure over the same evaluation set.
pub fn correlation_disparity(z_s: &Matrix, z_t: &Matrix) -> Result<CorrelationDisparity> {
    if z_s.rows() != z_t.rows() || z_s.cols() != z_t.cols() {
        return Err(Error::ShapeMismatch(format!(
            "student {}x{} vs teacher {}x{}",
            z_s.rows(),
            z_s.cols(),
            z_t.rows(),
            z_t.cols()
        )));
    }
    let corr_s = correlation_matrix(z_s)?;
    let corr_t = correlation_matrix(z_t)?;
    let k = z_s.cols();
    let mut matrix = Matrix::zeros(k, k);
    let mut off_sum = 0.0;
    for a in 0..k {
        for b in 0..k {
            let d = if a == b {
                0.0
            } else {
                (corr_s.row(a)[b] - corr_t.row(a)[b]).abs()
            };
            matrix.row_mut(a)[b] = d;
            if a != b {
                off_sum += d;
            }
        }
    }
    let off_count = (k * k - k) as f64;
    Ok(CorrelationDisparity {
        matrix,
        mean_off_diagonal: if off_count > 0.0 { off_sum / off_count } else { 0.0 },
    })
}

/// Exact per-epoch optimizer step-count increase from augmenting a fraction
/// r of the dataset at fixed batch size: floor(N·r)/N. Pure arithmetic; the
/// matching wall-clock measurement is the caller's job.
pub fn cost_report(base_n: usize, r: f64) -> f64 {
    boundary_count(base_n, r) as f64 / base_n as f64
}

/// One JSON-lines metrics record. Each variant serializes with a `record`
/// tag so streams stay self-describing.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum MetricRecord {
    TeacherEval {
        train_accuracy: f64,
        test_accuracy: f64,
        checksum: String,
    },
    StudentEval {
        train_accuracy: f64,
        test_accuracy: f64,
        checksum: String,
    },
    BucketConfidence(BucketStats),
    DistillEpoch {
        epoch: usize,
        train_loss: f64,
        train_accuracy: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        eval_accuracy: Option<f64>,
    },
    CorrelationDisparity {
        mean_off_diagonal: f64,
    },
    Cost {
        r: f64,
        base_n: usize,
        augmented_n: usize,
        step_increase: f64,
    },
}

/// Serializes records one JSON object per line.
pub fn to_json_lines(records: &[MetricRecord]) -> Result<String> {
    let mut out = String::new();
    for record in records {
        out.push_str(
            &serde_json::to_string(record)
                .map_err(|e| Error::Malformed(format!("metrics serialization: {e}")))?,
        );
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{partition, rank_dataset, EnergyRecord};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plan_of(energies: &[f64], r: f64) -> PartitionPlan {
        let mut scored: Vec<(u64, f64)> = energies
            .iter()
            .enumerate()
            .map(|(i, &e)| (i as u64, e))
            .collect();
        scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let records: Vec<EnergyRecord> = scored
            .into_iter()
            .enumerate()
            .map(|(idx, (sample_id, energy))| EnergyRecord {
                sample_id,
                energy,
                rank: idx + 1,
            })
            .collect();
        partition(&records, r).unwrap()
    }

    #[test]
    fn identical_logits_give_equal_bucket_confidence() {
        let rows = vec![vec![1.0, 0.0, -1.0]; 10];
        let logits = Matrix::from_rows(rows).unwrap();
        let records = rank_dataset(&logits, 1.0).unwrap();
        let plan = partition(&records, 0.4).unwrap();
        let stats = bucket_confidence(&logits, &plan).unwrap();
        let low = stats.low.mean_max_prob.unwrap();
        let high = stats.high.mean_max_prob.unwrap();
        assert_relative_eq!(low, high, epsilon = 1e-12);
        assert_eq!(stats.low.count + stats.else_.count + stats.high.count, 10);
    }

    #[test]
    fn scaled_onehots_put_confidence_in_low_bucket() {
        // Larger scale ⇒ lower energy and higher max-prob, so the LOW bucket
        // collects the confident rows.
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                let scale = 1.0 + i as f64;
                vec![scale, 0.0, 0.0]
            })
            .collect();
        let logits = Matrix::from_rows(rows).unwrap();
        let records = rank_dataset(&logits, 1.0).unwrap();
        let plan = partition(&records, 0.2).unwrap();
        let stats = bucket_confidence(&logits, &plan).unwrap();
        assert!(stats.low.mean_max_prob.unwrap() > stats.high.mean_max_prob.unwrap());
        assert_eq!(stats.low.count, plan.n_boundary());
        assert_eq!(stats.high.count, plan.n_boundary());
    }

    #[test]
    fn bucket_mean_predictions_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let logits = Matrix::from_rows(rows).unwrap();
        let records = rank_dataset(&logits, 1.0).unwrap();
        let plan = partition(&records, 0.3).unwrap();
        let stats = bucket_confidence(&logits, &plan).unwrap();
        for bucket in [&stats.low, &stats.else_, &stats.high] {
            let sum: f64 = bucket.mean_prediction.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_else_bucket_reports_none() {
        let energies: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let plan = plan_of(&energies, 0.5);
        let rows = vec![vec![1.0, 0.0]; 10];
        let stats = bucket_confidence(&Matrix::from_rows(rows).unwrap(), &plan).unwrap();
        assert_eq!(stats.else_.count, 0);
        assert!(stats.else_.mean_max_prob.is_none());
    }

    #[test]
    fn disparity_zero_for_identical_and_affine_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let z = Matrix::from_rows(rows.clone()).unwrap();
        let same = correlation_disparity(&z, &z).unwrap();
        assert!(same.matrix.data().iter().all(|&v| v == 0.0));
        assert_eq!(same.mean_off_diagonal, 0.0);

        let scaled_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| 2.0 * v + 5.0).collect())
            .collect();
        let scaled = Matrix::from_rows(scaled_rows).unwrap();
        let affine = correlation_disparity(&scaled, &z).unwrap();
        assert!(affine.mean_off_diagonal < 1e-9);
        for v in affine.matrix.data() {
            assert!(*v < 1e-9);
        }
    }

    #[test]
    fn independent_matrices_have_positive_disparity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut random = |n: usize, k: usize| {
            Matrix::from_rows(
                (0..n)
                    .map(|_| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect(),
            )
            .unwrap()
        };
        let a = random(1000, 3);
        let b = random(1000, 3);
        let d = correlation_disparity(&a, &b).unwrap();
        assert!(d.mean_off_diagonal > 0.0);
        // Symmetry and bounds.
        for i in 0..3 {
            assert_eq!(d.matrix.row(i)[i], 0.0);
            for j in 0..3 {
                assert_eq!(d.matrix.row(i)[j], d.matrix.row(j)[i]);
                assert!((0.0..=2.0).contains(&d.matrix.row(i)[j]));
            }
        }
    }

    #[test]
    fn degenerate_column_is_rejected() {
        let rows = vec![vec![1.0, 7.0], vec![2.0, 7.0], vec![3.0, 7.0]];
        let z = Matrix::from_rows(rows).unwrap();
        assert!(matches!(
            correlation_disparity(&z, &z),
            Err(Error::DegenerateColumn(1))
        ));
    }

    #[test]
    fn cost_report_is_exact_arithmetic() {
        assert_eq!(cost_report(1000, 0.0), 0.0);
        assert_eq!(cost_report(1000, 0.5), 0.5);
        assert_eq!(cost_report(1000, 1.0), 1.0);
        assert_eq!(cost_report(10, 0.25), 0.2); // floor(2.5)/10
    }

    #[test]
    fn metrics_serialize_one_object_per_line() {
        let records = vec![
            MetricRecord::Cost {
                r: 0.2,
                base_n: 100,
                augmented_n: 120,
                step_increase: 0.2,
            },
            MetricRecord::CorrelationDisparity {
                mean_off_diagonal: 0.5,
            },
        ];
        let text = to_json_lines(&records).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("\"record\":\"cost\""));
        assert!(lines[1].contains("correlation_disparity"));
    }
}
