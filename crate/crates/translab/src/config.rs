//! Experiment configuration: a JSON schema describing geometry, bundle,
//! symbol and run parameters.  Complex numbers are `[re, im]` pairs; all
//! coefficient functions are finite lists of Fourier modes.

use crate::field::{MatField, SmoothField};
use crate::geometry::ModelGeometry;
use crate::operators::Mode;
use crate::symbols::{DirCoef, TransverseSymbol};
use crate::{Error, Result, C64};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FourierMode {
    pub c: [i32; 2],
    pub coef: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub row: usize,
    pub col: usize,
    pub modes: Vec<FourierMode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub p: usize,
    pub q: usize,
    #[serde(default = "default_grid")]
    pub grid_n: usize,
    pub g_f: Vec<MatrixEntry>,
    pub g_b: Vec<MatrixEntry>,
    #[serde(default)]
    pub a: Vec<MatrixEntry>,
}

fn default_grid() -> usize {
    64
}

fn build_mat(
    q: usize,
    n: usize,
    rows: usize,
    cols: usize,
    entries: &[MatrixEntry],
    identity: bool,
) -> Result<MatField> {
    let mut fields = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut modes: Vec<(Mode, C64)> = Vec::new();
            if identity && r == c {
                modes.push(([0, 0], C64::new(1.0, 0.0)));
            }
            for e in entries.iter().filter(|e| e.row == r && e.col == c) {
                for m in &e.modes {
                    modes.push((m.c, C64::new(m.coef[0], m.coef[1])));
                }
            }
            let f = SmoothField::from_modes(q, n, &modes);
            // coefficient data must be real
            let imag = f.map(|v| C64::new(v.im, 0.0)).max_abs();
            if imag > 1e-12 {
                return Err(Error::ConfigInvalid(format!(
                    "coefficient ({r},{c}) is not real (imag magnitude {imag:.2e}); \
                     list conjugate mode pairs"
                )));
            }
            fields.push(f);
        }
    }
    Ok(MatField::from_fields(rows, cols, fields))
}

impl GeometryConfig {
    /// Validate and build the model geometry.  Diagonal metric entries not
    /// listed default to 1, off-diagonal to 0; connection entries default
    /// to 0.
    pub fn build(&self) -> Result<ModelGeometry> {
        if !(1..=2).contains(&self.p) || !(1..=2).contains(&self.q) {
            return Err(Error::ConfigInvalid(format!(
                "p = {}, q = {} outside the supported range {{1, 2}}",
                self.p, self.q
            )));
        }
        let g_f = build_mat(self.q, self.grid_n, self.p, self.p, &self.g_f, true)?;
        let g_b = build_mat(self.q, self.grid_n, self.q, self.q, &self.g_b, true)?;
        let a = build_mat(self.q, self.grid_n, self.p, self.q, &self.a, false)?;
        ModelGeometry::new(self.p, self.q, g_f, g_b, a)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleFormEntry {
    /// Coordinate direction of the one-form component (0-based).
    pub dir: usize,
    pub row: usize,
    pub col: usize,
    pub modes: Vec<FourierMode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleConfig {
    pub rank: usize,
    #[serde(default)]
    pub forms: Vec<BundleFormEntry>,
}

impl BundleConfig {
    pub fn build(&self, q: usize, n: usize) -> Result<crate::dirac::BundleData> {
        let mut b_forms = Vec::new();
        for k in 0..q {
            let mut fields = Vec::with_capacity(self.rank * self.rank);
            for r in 0..self.rank {
                for c in 0..self.rank {
                    let mut modes: Vec<(Mode, C64)> = Vec::new();
                    for e in self.forms.iter().filter(|e| e.dir == k && e.row == r && e.col == c) {
                        for m in &e.modes {
                            modes.push((m.c, C64::new(m.coef[0], m.coef[1])));
                        }
                    }
                    fields.push(SmoothField::from_modes(q, n, &modes));
                }
            }
            b_forms.push(MatField::from_fields(self.rank, self.rank, fields));
        }
        Ok(crate::dirac::BundleData { rank: self.rank, b_forms })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymbolTermConfig {
    pub a: [i32; 2],
    pub b: [i32; 2],
    pub c: [i32; 2],
    #[serde(default)]
    pub j: usize,
    /// Row-major rank x rank complex matrix as [re, im] pairs.
    pub matrix: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymbolConfig {
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default)]
    pub order: i32,
    #[serde(default)]
    pub depth: usize,
    pub terms: Vec<SymbolTermConfig>,
}

fn default_rank() -> usize {
    1
}

impl SymbolConfig {
    pub fn build(&self, p: usize, q: usize) -> Result<TransverseSymbol> {
        let mut k = TransverseSymbol::new(p, q, self.rank, self.order, self.depth);
        for t in &self.terms {
            if t.matrix.len() != self.rank * self.rank {
                return Err(Error::ConfigInvalid(format!(
                    "symbol term matrix has {} entries, expected {}",
                    t.matrix.len(),
                    self.rank * self.rank
                )));
            }
            if t.j > self.depth {
                return Err(Error::ConfigInvalid(format!(
                    "symbol term level {} exceeds depth {}",
                    t.j, self.depth
                )));
            }
            let mut m = Array2::zeros((self.rank, self.rank));
            for r in 0..self.rank {
                for c in 0..self.rank {
                    let [re, im] = t.matrix[r * self.rank + c];
                    m[(r, c)] = C64::new(re, im);
                }
            }
            k.add_term((t.a, t.b, t.c), t.j, DirCoef::constant(q, m));
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CutoffConfig {
    #[serde(default = "default_lam")]
    pub lam: i32,
    #[serde(default = "default_lam_x")]
    pub lam_x: i32,
}

fn default_lam() -> i32 {
    64
}
fn default_lam_x() -> i32 {
    8
}

impl Default for CutoffConfig {
    fn default() -> Self {
        CutoffConfig { lam: default_lam(), lam_x: default_lam_x() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<String>,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub bundle: Option<BundleConfig>,
    #[serde(default)]
    pub symbol: Option<SymbolConfig>,
    #[serde(default)]
    pub cutoffs: CutoffConfig,
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    #[serde(default)]
    pub lambdas: Vec<i32>,
}

fn default_times() -> Vec<f64> {
    vec![1.0]
}

impl ExperimentConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::ConfigInvalid(format!("cannot parse {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field validation.
    pub fn validate(&self) -> Result<()> {
        let known = crate::scenarios::SCENARIOS;
        if !known.iter().any(|s| s.name == self.scenario) {
            return Err(Error::ConfigInvalid(format!(
                "unknown scenario '{}'; expected one of {}",
                self.scenario,
                known.iter().map(|s| s.name).collect::<Vec<_>>().join(", ")
            )));
        }
        let needs_q2 = [
            "dirac-adjoint",
            "dirac-symbols",
            "signature-isotypic",
            "egorov-dirac",
        ];
        if needs_q2.contains(&self.scenario.as_str()) && self.geometry.q != 2 {
            return Err(Error::ConfigInvalid(format!(
                "scenario '{}' requires codimension q = 2 (config has q = {})",
                self.scenario, self.geometry.q
            )));
        }
        if self.scenario.starts_with("egorov") && self.lambdas.is_empty() {
            return Err(Error::ConfigInvalid(
                "egorov scenarios need a non-empty 'lambdas' list".into(),
            ));
        }
        for lam in &self.lambdas {
            if *lam * 2 > self.cutoffs.lam {
                return Err(Error::ConfigInvalid(format!(
                    "lambda = {lam} exceeds lam/2 = {}",
                    self.cutoffs.lam / 2
                )));
            }
        }
        // geometry must build
        self.geometry.build()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_validates_a_minimal_config() {
        let text = r#"{
            "scenario": "geometry-checks",
            "geometry": {
                "p": 1, "q": 1,
                "g_f": [{"row": 0, "col": 0, "modes": [
                    {"c": [1, 0], "coef": [0.1, 0.0]},
                    {"c": [-1, 0], "coef": [0.1, 0.0]}
                ]}],
                "g_b": [],
                "a": []
            }
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        cfg.validate().unwrap();
        let geom = cfg.geometry.build().unwrap();
        assert!((geom.g_f.at(0, 0).eval_re([0.0, 0.0]) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn rejects_dirac_scenarios_at_codimension_one() {
        let text = r#"{
            "scenario": "dirac-adjoint",
            "geometry": {"p": 1, "q": 1, "g_f": [], "g_b": [], "a": []}
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        let err = cfg.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("q = 2"), "message should name the constraint: {msg}");
    }
}
