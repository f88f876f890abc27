//! Count-matrix ingestion, validation, low-count filtering, and sampling-depth
//! estimation.
//!
//! The on-disk format is a TSV with a header row `gene<TAB>sample1...sampleN`
//! and one row per gene holding non-negative integer counts. Condition labels
//! assign each sample column to group A or B, either inline or via a
//! two-column `sample<TAB>condition` file.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Experimental condition of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    A,
    B,
}

impl Condition {
    pub const BOTH: [Condition; 2] = [Condition::A, Condition::B];
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::A => write!(f, "A"),
            Condition::B => write!(f, "B"),
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Condition::A),
            "B" | "b" => Ok(Condition::B),
            other => Err(Error::invalid(format!(
                "condition label must be A or B, got {other:?}"
            ))),
        }
    }
}

/// Validated read-count matrix: m genes by n_A + n_B samples.
///
/// Immutable after construction; counts are stored row-major as 64-bit
/// integers so deep-sequencing totals cannot overflow.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountMatrix {
    counts: Vec<u64>,
    gene_ids: Vec<String>,
    sample_names: Vec<String>,
    condition: Vec<Condition>,
    idx_a: Vec<usize>,
    idx_b: Vec<usize>,
}

impl CountMatrix {
    pub fn new(
        counts: Vec<u64>,
        gene_ids: Vec<String>,
        sample_names: Vec<String>,
        condition: Vec<Condition>,
    ) -> Result<Self> {
        let m = gene_ids.len();
        let n = sample_names.len();
        if condition.len() != n {
            return Err(Error::invalid(format!(
                "{} condition labels for {} sample columns",
                condition.len(),
                n
            )));
        }
        if counts.len() != m * n {
            return Err(Error::invalid(format!(
                "count buffer holds {} values, expected {m} genes x {n} samples",
                counts.len()
            )));
        }
        let idx_a: Vec<usize> = (0..n).filter(|&i| condition[i] == Condition::A).collect();
        let idx_b: Vec<usize> = (0..n).filter(|&i| condition[i] == Condition::B).collect();
        if idx_a.is_empty() || idx_b.is_empty() {
            return Err(Error::invalid(
                "each condition needs at least one sample".to_string(),
            ));
        }
        let mut seen = std::collections::HashSet::with_capacity(m);
        for id in &gene_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate gene id {id:?}")));
            }
        }
        Ok(CountMatrix {
            counts,
            gene_ids,
            sample_names,
            condition,
            idx_a,
            idx_b,
        })
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_names.len()
    }

    pub fn n_in(&self, cond: Condition) -> usize {
        self.sample_indices(cond).len()
    }

    /// Column indices belonging to `cond`, in input order.
    pub fn sample_indices(&self, cond: Condition) -> &[usize] {
        match cond {
            Condition::A => &self.idx_a,
            Condition::B => &self.idx_b,
        }
    }

    pub fn count(&self, gene: usize, sample: usize) -> u64 {
        self.counts[gene * self.n_samples() + sample]
    }

    pub fn row(&self, gene: usize) -> &[u64] {
        let n = self.n_samples();
        &self.counts[gene * n..(gene + 1) * n]
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn sample_names(&self) -> &[String] {
        &self.sample_names
    }

    pub fn conditions(&self) -> &[Condition] {
        &self.condition
    }

    pub fn gene_total(&self, gene: usize) -> u64 {
        self.row(gene).iter().sum()
    }
}

/// Low-count exclusion rule: drop genes whose total count across all samples
/// is less than or equal to `min_total_count`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_total_count: u64,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy { min_total_count: 5 }
    }
}

/// Per-sample scale factors; strictly positive, geometric mean 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingDepths(Vec<f64>);

impl SamplingDepths {
    pub fn new(depths: Vec<f64>) -> Result<Self> {
        if depths.is_empty() {
            return Err(Error::invalid("no sampling depths"));
        }
        if depths.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(Error::invalid(
                "sampling depths must be strictly positive and finite",
            ));
        }
        Ok(SamplingDepths(depths))
    }

    /// All samples at depth 1 (simulation convention).
    pub fn unit(n: usize) -> Self {
        SamplingDepths(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, sample: usize) -> f64 {
        self.0[sample]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Parse a counts TSV and attach condition labels.
///
/// Errors carry the 1-based line number and the offending column so a bad
/// cell can be located in the input file.
pub fn load_counts(path: &Path, labels: &[Condition]) -> Result<CountMatrix> {
    let file = std::fs::File::open(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| {
        Error::parse(1, "gene", "empty file: expected header row")
    })?;
    let header = header.map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let header_fields: Vec<&str> = header.split('\t').collect();
    if header_fields.len() < 2 {
        return Err(Error::parse(
            1,
            "gene",
            "header must name a gene column and at least one sample column",
        ));
    }
    let sample_names: Vec<String> = header_fields[1..].iter().map(|s| s.to_string()).collect();
    if labels.len() != sample_names.len() {
        return Err(Error::invalid(format!(
            "{} condition labels for {} sample columns",
            labels.len(),
            sample_names.len()
        )));
    }

    let mut gene_ids = Vec::new();
    let mut counts = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != sample_names.len() + 1 {
            return Err(Error::parse(
                line_no,
                "row",
                format!(
                    "expected {} fields, found {}",
                    sample_names.len() + 1,
                    fields.len()
                ),
            ));
        }
        gene_ids.push(fields[0].to_string());
        for (col, field) in fields[1..].iter().enumerate() {
            let value: u64 = field.trim().parse().map_err(|_| {
                Error::parse(
                    line_no,
                    &sample_names[col],
                    format!("count must be a non-negative integer, got {field:?}"),
                )
            })?;
            counts.push(value);
        }
    }

    CountMatrix::new(counts, gene_ids, sample_names, labels.to_vec())
}

/// Write a CountMatrix in the same TSV format `load_counts` reads.
pub fn write_counts(cm: &CountMatrix, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|source| {
        Error::Write {
            path: path.to_path_buf(),
            source,
        }
    })?);
    let mut write = |s: String| -> Result<()> {
        out.write_all(s.as_bytes()).map_err(|source| Error::Write {
            path: path.to_path_buf(),
            source,
        })
    };
    write(format!("gene\t{}\n", cm.sample_names().join("\t")))?;
    for j in 0..cm.n_genes() {
        let row: Vec<String> = cm.row(j).iter().map(|k| k.to_string()).collect();
        write(format!("{}\t{}\n", cm.gene_ids()[j], row.join("\t")))?;
    }
    Ok(())
}

/// Parse inline condition labels such as `A,A,B,B`.
pub fn parse_label_list(s: &str) -> Result<Vec<Condition>> {
    s.split(',').map(|tok| tok.parse()).collect()
}

/// Read a two-column `sample<TAB>condition` file and order the labels to match
/// `sample_names`.
pub fn read_label_file(path: &Path, sample_names: &[String]) -> Result<Vec<Condition>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut by_name = std::collections::HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (sample, cond) = match (fields.next(), fields.next()) {
            (Some(s), Some(c)) => (s, c),
            _ => {
                return Err(Error::parse(
                    line_no,
                    "condition",
                    "expected sample<TAB>condition",
                ))
            }
        };
        if sample == "sample" && cond == "condition" {
            continue; // optional header
        }
        let cond: Condition = cond
            .parse()
            .map_err(|e| Error::parse(line_no, "condition", format!("{e}")))?;
        if by_name.insert(sample.to_string(), cond).is_some() {
            return Err(Error::parse(
                line_no,
                "sample",
                format!("duplicate sample {sample:?}"),
            ));
        }
    }
    sample_names
        .iter()
        .map(|name| {
            by_name.get(name).copied().ok_or_else(|| {
                Error::invalid(format!("no condition label for sample {name:?}"))
            })
        })
        .collect()
}

/// Drop genes whose total count is at or below the policy threshold.
///
/// Returns the retained matrix (row order preserved) and the removed gene ids
/// in input order. Idempotent for a fixed policy.
pub fn filter_low_counts(
    cm: &CountMatrix,
    policy: FilterPolicy,
) -> Result<(CountMatrix, Vec<String>)> {
    let mut keep_ids = Vec::new();
    let mut keep_counts = Vec::new();
    let mut removed = Vec::new();
    for j in 0..cm.n_genes() {
        if cm.gene_total(j) > policy.min_total_count {
            keep_ids.push(cm.gene_ids()[j].clone());
            keep_counts.extend_from_slice(cm.row(j));
        } else {
            removed.push(cm.gene_ids()[j].clone());
        }
    }
    if keep_ids.is_empty() {
        return Err(Error::Empty(format!(
            "all {} genes fall at or below the total-count threshold {}",
            cm.n_genes(),
            policy.min_total_count
        )));
    }
    let filtered = CountMatrix::new(
        keep_counts,
        keep_ids,
        cm.sample_names().to_vec(),
        cm.conditions().to_vec(),
    )?;
    Ok((filtered, removed))
}

/// Median-of-ratios sampling depths.
///
/// For each sample i, s_i is the median over genes of k_ij divided by the
/// gene's geometric mean across samples; genes containing any zero count are
/// excluded from the reference set. Depths are rescaled afterwards so their
/// geometric mean is 1, which fixes the scale the model itself leaves free.
pub fn estimate_depths(cm: &CountMatrix) -> Result<SamplingDepths> {
    let n = cm.n_samples();
    let mut log_geo_means = Vec::new();
    let mut reference_rows = Vec::new();
    for j in 0..cm.n_genes() {
        let row = cm.row(j);
        if row.iter().all(|&k| k > 0) {
            let log_gm = row.iter().map(|&k| (k as f64).ln()).sum::<f64>() / n as f64;
            log_geo_means.push(log_gm);
            reference_rows.push(j);
        }
    }
    if reference_rows.is_empty() {
        return Err(Error::invalid(
            "no gene has strictly positive counts in every sample; \
             apply a stronger low-count filter before estimating depths",
        ));
    }

    let mut depths = Vec::with_capacity(n);
    let mut ratios = Vec::with_capacity(reference_rows.len());
    for i in 0..n {
        ratios.clear();
        for (&j, &log_gm) in reference_rows.iter().zip(&log_geo_means) {
            ratios.push((cm.count(j, i) as f64).ln() - log_gm);
        }
        depths.push(median(&mut ratios).exp());
    }

    // Normalize to geometric mean 1.
    let log_center = depths.iter().map(|s| s.ln()).sum::<f64>() / n as f64;
    for s in &mut depths {
        *s /= log_center.exp();
    }
    SamplingDepths::new(depths)
}

/// Write depths as a two-column `sample<TAB>depth` TSV.
pub fn write_depths(cm: &CountMatrix, depths: &SamplingDepths, path: &Path) -> Result<()> {
    let mut out = String::from("sample\tdepth\n");
    for (name, s) in cm.sample_names().iter().zip(depths.as_slice()) {
        out.push_str(&format!("{name}\t{s}\n"));
    }
    std::fs::write(path, out).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).expect("median of non-finite values"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(counts: &[&[u64]], labels: &[Condition]) -> CountMatrix {
        let m = counts.len();
        let n = counts[0].len();
        let flat: Vec<u64> = counts.iter().flat_map(|r| r.iter().copied()).collect();
        CountMatrix::new(
            flat,
            (0..m).map(|j| format!("g{}", j + 1)).collect(),
            (0..n).map(|i| format!("s{}", i + 1)).collect(),
            labels.to_vec(),
        )
        .unwrap()
    }

    fn ab(n_a: usize, n_b: usize) -> Vec<Condition> {
        let mut v = vec![Condition::A; n_a];
        v.extend(vec![Condition::B; n_b]);
        v
    }

    #[test]
    fn load_counts_parses_simple_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        std::fs::write(&path, "gene\ts1\ts2\ts3\ts4\ng1\t1\t2\t3\t4\ng2\t5\t6\t7\t8\n").unwrap();
        let cm = load_counts(&path, &ab(2, 2)).unwrap();
        assert_eq!(cm.n_genes(), 2);
        assert_eq!(cm.n_in(Condition::A), 2);
        assert_eq!(cm.n_in(Condition::B), 2);
        assert_eq!(cm.row(1), &[5, 6, 7, 8]);
    }

    #[test]
    fn load_counts_reports_negative_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        std::fs::write(&path, "gene\ts1\ts2\ng1\t1\t-1\n").unwrap();
        let err = load_counts(&path, &ab(1, 1)).unwrap_err();
        match err {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, "s2");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn load_counts_rejects_duplicate_gene_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        std::fs::write(&path, "gene\ts1\ts2\ng1\t1\t2\ng1\t3\t4\n").unwrap();
        let err = load_counts(&path, &ab(1, 1)).unwrap_err();
        assert!(err.to_string().contains("duplicate gene id"), "{err}");
    }

    #[test]
    fn load_counts_rejects_label_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        std::fs::write(&path, "gene\ts1\ts2\ng1\t1\t2\n").unwrap();
        assert!(load_counts(&path, &ab(2, 1)).is_err());
    }

    #[test]
    fn write_then_load_round_trips() {
        let cm = matrix(&[&[0, 7, 19, 2], &[3, 0, 1, 4]], &ab(2, 2));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        write_counts(&cm, &path).unwrap();
        let back = load_counts(&path, &ab(2, 2)).unwrap();
        assert_eq!(cm, back);
    }

    #[test]
    fn filter_drops_at_threshold_and_keeps_above() {
        let cm = matrix(&[&[1, 1, 1, 1], &[3, 3, 0, 0]], &ab(2, 2));
        let (kept, removed) = filter_low_counts(&cm, FilterPolicy { min_total_count: 5 }).unwrap();
        assert_eq!(removed, vec!["g1".to_string()]); // sum 4 <= 5
        assert_eq!(kept.gene_ids(), &["g2".to_string()]); // sum 6 > 5
    }

    #[test]
    fn filter_zero_threshold_keeps_positive_matrix() {
        let cm = matrix(&[&[1, 1], &[2, 5]], &ab(1, 1));
        let (kept, removed) = filter_low_counts(&cm, FilterPolicy { min_total_count: 0 }).unwrap();
        assert!(removed.is_empty());
        assert_eq!(kept.n_genes(), 2);
    }

    #[test]
    fn filter_is_idempotent() {
        let cm = matrix(&[&[1, 1, 1, 1], &[9, 9, 9, 9], &[0, 0, 0, 7]], &ab(2, 2));
        let policy = FilterPolicy { min_total_count: 5 };
        let (once, _) = filter_low_counts(&cm, policy).unwrap();
        let (twice, removed) = filter_low_counts(&once, policy).unwrap();
        assert_eq!(once, twice);
        assert!(removed.is_empty());
    }

    #[test]
    fn filter_all_removed_is_an_error() {
        let cm = matrix(&[&[1, 1], &[0, 2]], &ab(1, 1));
        let err = filter_low_counts(&cm, FilterPolicy { min_total_count: 10 }).unwrap_err();
        assert!(matches!(err, Error::Empty(_)));
    }

    #[test]
    fn depths_recover_proportional_columns() {
        // Sample 2 is exactly twice sample 1.
        let cm = matrix(&[&[2, 4], &[10, 20], &[7, 14]], &[Condition::A, Condition::B]);
        let s = estimate_depths(&cm).unwrap();
        let ratio = s.get(1) / s.get(0);
        assert!((ratio - 2.0).abs() < 1e-12, "ratio {ratio}");
    }

    #[test]
    fn depths_match_hand_computed_two_by_two() {
        // Geometric means: sqrt(8), sqrt(128); per-sample ratio medians give
        // (1/sqrt(2), sqrt(2)), already at geometric mean 1.
        let cm = matrix(&[&[2, 4], &[8, 16]], &[Condition::A, Condition::B]);
        let s = estimate_depths(&cm).unwrap();
        assert!((s.get(0) - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!((s.get(1) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn depths_single_sample_is_unit() {
        let counts = vec![4u64, 9, 25];
        let cm = CountMatrix::new(
            counts,
            vec!["g1".into(), "g2".into(), "g3".into()],
            vec!["s1".into()],
            vec![Condition::A],
        );
        // A one-sample matrix cannot carry both conditions, so build the
        // estimator input directly via a two-condition matrix is impossible;
        // the estimator itself only needs the counts, so validate through a
        // relaxed constructor path.
        assert!(cm.is_err());
        // Check the self-ratio convention on a minimal two-sample identical
        // matrix instead: equal columns must give unit depths.
        let cm = matrix(&[&[4, 4], &[9, 9]], &[Condition::A, Condition::B]);
        let s = estimate_depths(&cm).unwrap();
        assert!((s.get(0) - 1.0).abs() < 1e-12);
        assert!((s.get(1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn depths_invariant_under_gene_permutation() {
        let rows: [&[u64]; 4] = [&[2, 4, 6], &[8, 16, 3], &[5, 5, 5], &[40, 2, 9]];
        let perm: [&[u64]; 4] = [&[5, 5, 5], &[2, 4, 6], &[40, 2, 9], &[8, 16, 3]];
        let labels = [Condition::A, Condition::A, Condition::B];
        let s1 = estimate_depths(&matrix(&rows, &labels)).unwrap();
        let s2 = estimate_depths(&matrix(&perm, &labels)).unwrap();
        for i in 0..3 {
            assert!((s1.get(i) - s2.get(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn depths_error_without_positive_reference_gene() {
        let cm = matrix(&[&[0, 4], &[8, 0]], &[Condition::A, Condition::B]);
        let err = estimate_depths(&cm).unwrap_err();
        assert!(err.to_string().contains("low-count filter"), "{err}");
    }

    #[test]
    fn label_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.tsv");
        std::fs::write(&path, "sample\tcondition\ns2\tB\ns1\tA\n").unwrap();
        let names = vec!["s1".to_string(), "s2".to_string()];
        let labels = read_label_file(&path, &names).unwrap();
        assert_eq!(labels, vec![Condition::A, Condition::B]);
    }
}
