//! CSV and JSON output files.
//!
//! Every CSV starts with a `# schema_version=N` comment line. Floats are
//! written with the shortest decimal that parses back to the same value.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{DynamicsSeries, InitFamily, RealizationResult, ScalingFit, ScalingMetric};
use crate::histories::{DecoherenceFunctional, History};
use crate::metrics::DistanceBin;
use crate::model::CouplingRegime;

pub const SCHEMA_VERSION: u32 = 1;

pub const RESULTS_HEADER: [&str; 16] = [
    "d",
    "l",
    "regime",
    "init_family",
    "h_seed",
    "s_seed",
    "eig_index",
    "epsilon_avg",
    "pair_count",
    "skipped_pairs",
    "delta_max",
    "argmax_subset_bitmask",
    "p_forward",
    "p_noarrow",
    "p_backward",
    "wall_time_s",
];

/// Plain decimal in `[1e-5, 1e16)`, exponent form otherwise.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

struct CsvOut {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "# schema_version={SCHEMA_VERSION}").map_err(|e| Error::io(path, e))?;
        let mut out = CsvOut {
            path: path.to_path_buf(),
            inner: csv::Writer::from_writer(buf),
        };
        out.row(header.iter().map(|s| s.to_string()))?;
        Ok(out)
    }

    fn row(&mut self, fields: impl IntoIterator<Item = String>) -> Result<()> {
        let fields: Vec<String> = fields.into_iter().collect();
        self.inner.write_record(&fields).map_err(|source| Error::Csv {
            path: self.path.clone(),
            source,
        })
    }

    fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// `dynamics.csv` for the first series, `dynamics_<k>.csv` for the rest.
pub fn write_dynamics(dir: &Path, series: &[DynamicsSeries]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for (k, s) in series.iter().enumerate() {
        let name = if k == 0 {
            "dynamics.csv".to_string()
        } else {
            format!("dynamics_{k}.csv")
        };
        let path = dir.join(name);
        let mut out = CsvOut::create(&path, &["t", "p_minus", "p_zero", "p_plus"])?;
        for m in &s.samples {
            out.row(std::iter::once(format_float(m.t)).chain(m.weights.iter().map(|&w| format_float(w))))?;
        }
        out.finish()?;
        paths.push(path);
    }
    Ok(paths)
}

/// One row per successful realization and history length.
pub fn write_results(path: &Path, results: &[RealizationResult]) -> Result<()> {
    let mut out = CsvOut::create(path, &RESULTS_HEADER)?;
    for r in results.iter().filter(|r| r.is_ok()) {
        for rec in &r.per_l {
            out.row([
                r.d.to_string(),
                rec.l.to_string(),
                r.regime.to_string(),
                r.init_family.to_string(),
                r.hamiltonian_seed.to_string(),
                r.state_seed.to_string(),
                r.eigenstate_index.map(|i| i.to_string()).unwrap_or_default(),
                format_float(rec.epsilon_avg),
                rec.pair_count.to_string(),
                rec.skipped_pairs.to_string(),
                format_float(rec.delta_max),
                rec.argmax_subset.to_string(),
                format_float(rec.arrow.p_forward),
                format_float(rec.arrow.p_noarrow),
                format_float(rec.arrow.p_backward),
                format_float(r.wall_time_s),
            ])?;
        }
    }
    out.finish()
}

/// Failed realizations, one per row.
pub fn write_failures(path: &Path, results: &[RealizationResult]) -> Result<()> {
    let mut out = CsvOut::create(path, &["d", "h_seed", "s_seed", "error"])?;
    for r in results.iter().filter(|r| !r.is_ok()) {
        out.row([
            r.d.to_string(),
            r.hamiltonian_seed.to_string(),
            r.state_seed.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    out.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub d: usize,
    pub l: usize,
    pub regime: CouplingRegime,
    pub init_family: InitFamily,
    pub h_seed: u64,
    pub s_seed: u64,
    pub eig_index: Option<usize>,
    pub epsilon_avg: f64,
    pub pair_count: u64,
    pub skipped_pairs: u64,
    pub delta_max: f64,
    pub argmax_subset_bitmask: u32,
    pub p_forward: f64,
    pub p_noarrow: f64,
    pub p_backward: f64,
    pub wall_time_s: f64,
}

impl ResultRow {
    pub fn metric(&self, m: ScalingMetric) -> f64 {
        match m {
            ScalingMetric::EpsilonAvg => self.epsilon_avg,
            ScalingMetric::DeltaMax => self.delta_max,
        }
    }
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(RESULTS_HEADER.iter().copied()) {
        return Err(Error::InvalidArgument(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>()
        )));
    }
    reader.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)
}

/// `fit.csv` with one row, plus `fit_points.csv` with the averaged points.
pub fn write_fit(path: &Path, points_path: &Path, l: usize, metric: ScalingMetric, fit: &ScalingFit) -> Result<()> {
    let mut out = CsvOut::create(path, &["l", "metric", "alpha", "intercept", "r_squared", "n_points"])?;
    out.row([
        l.to_string(),
        metric.to_string(),
        format_float(fit.alpha),
        format_float(fit.intercept),
        format_float(fit.r_squared),
        fit.points.len().to_string(),
    ])?;
    out.finish()?;
    let mut pts = CsvOut::create(points_path, &["d", "mean", "n_realizations"])?;
    for p in &fit.points {
        pts.row([p.d.to_string(), format_float(p.mean), p.n.to_string()])?;
    }
    pts.finish()
}

/// Branch probabilities, histories written oldest label first.
pub fn write_histogram(path: &Path, df: &DecoherenceFunctional<f64>) -> Result<()> {
    let mut out = CsvOut::create(path, &["history", "probability"])?;
    for (h, p) in df.probabilities().into_iter().enumerate() {
        out.row([History::from_index(h, df.len()).to_string(), format_float(p)])?;
    }
    out.finish()
}

pub fn write_distance(path: &Path, rows: &[(usize, DistanceBin<f64>)]) -> Result<()> {
    let mut out = CsvOut::create(path, &["d", "hamming", "eps_mean", "pair_count"])?;
    for (d, b) in rows {
        out.row([
            d.to_string(),
            b.distance.to_string(),
            format_float(b.eps_mean),
            b.pair_count.to_string(),
        ])?;
    }
    out.finish()
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct DfDump {
    pub schema_version: u32,
    pub grid: Vec<f64>,
    /// Base-3 history codes, `x_0` least significant.
    pub histories: Vec<usize>,
    /// Row-major `[re, im]` pairs, `num_histories^2` of them.
    pub entries: Vec<[f64; 2]>,
}

impl DfDump {
    pub fn new(df: &DecoherenceFunctional<f64>) -> Self {
        DfDump {
            schema_version: SCHEMA_VERSION,
            grid: df.times().to_vec(),
            histories: (0..df.num_histories()).collect(),
            entries: df.entries().iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

pub fn write_df_json(path: &Path, df: &DecoherenceFunctional<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = BufWriter::new(file);
    serde_json::to_writer(&mut buf, &DfDump::new(df)).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    buf.write_all(b"\n")
        .and_then(|_| buf.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{run_realization, ScalingPoint, SweepSpec};

    #[test]
    fn float_format_round_trips() {
        for x in [0.0, 1.0, 0.1, -2.5, 1e-5, 9.99e-6, 1e16, 123456.789, 1.0 / 3.0, 5e-324, f64::MAX, -1e-300] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(format_float(0.5), "0.5");
        assert_eq!(format_float(2.5e-7), "2.5e-7");
        assert_eq!(format_float(3.0), "3");
    }

    #[test]
    fn results_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SweepSpec {
            d_grid: vec![5],
            num_steps: 3,
            ..SweepSpec::default()
        };
        let r = run_realization(&spec, 5, 0, 1).unwrap();
        let path = dir.path().join("results.csv");
        write_results(&path, std::slice::from_ref(&r)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# schema_version=1"));
        assert_eq!(lines.next(), Some(RESULTS_HEADER.join(",").as_str()));
        let rows = read_results(&path).unwrap();
        assert_eq!(rows.len(), 3);
        for (row, rec) in rows.iter().zip(&r.per_l) {
            assert_eq!(row.l, rec.l);
            assert_eq!(row.epsilon_avg, rec.epsilon_avg);
            assert_eq!(row.delta_max, rec.delta_max);
            assert_eq!(row.p_forward, rec.arrow.p_forward);
            assert_eq!(row.regime, CouplingRegime::Weak);
            assert_eq!(row.eig_index, None);
        }
    }

    #[test]
    fn fit_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let fit = ScalingFit {
            alpha: 0.5,
            intercept: 0.0,
            r_squared: 1.0,
            points: vec![ScalingPoint { d: 5, mean: 0.25, n: 9 }],
        };
        let (a, b) = (dir.path().join("fit.csv"), dir.path().join("fit_points.csv"));
        write_fit(&a, &b, 3, ScalingMetric::EpsilonAvg, &fit).unwrap();
        assert_eq!(
            std::fs::read_to_string(&a).unwrap(),
            "# schema_version=1\nl,metric,alpha,intercept,r_squared,n_points\n3,epsilon,0.5,0,1,1\n"
        );
        assert_eq!(
            std::fs::read_to_string(&b).unwrap(),
            "# schema_version=1\nd,mean,n_realizations\n5,0.25,9\n"
        );
    }

    #[test]
    fn histogram_labels_are_quoted_csv() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SweepSpec {
            d_grid: vec![5],
            num_steps: 2,
            ..SweepSpec::default()
        };
        let model = crate::experiments::prepare_model(&spec, 5, 0).unwrap();
        let rdf = crate::experiments::realization_df(&spec, &model, 0, 0).unwrap();
        let path = dir.path().join("histogram.csv");
        write_histogram(&path, &rdf.df).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2 + 27);
        assert!(lines[2].starts_with("\"-,-,-\","), "{}", lines[2]);
        let json = dir.path().join("df.json");
        write_df_json(&json, &rdf.df).unwrap();
        let dump: DfDump = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(dump, DfDump::new(&rdf.df));
        assert_eq!(dump.entries.len(), 729);
    }
}
