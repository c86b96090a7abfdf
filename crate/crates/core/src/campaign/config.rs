use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::deriv::DiffOpts;
use crate::error::{Error, Result};
use crate::field::BoxDomain;
use crate::flow::IntegratorOpts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statement {
    Theorem1,
    Theorem10,
    Lemma6,
    Lemma7,
    Lemma8,
    Lemma9,
    Prop11,
    Cor12First,
    Cor12Second,
}

impl Statement {
    pub const ALL: [Statement; 9] = [
        Statement::Theorem1,
        Statement::Theorem10,
        Statement::Lemma6,
        Statement::Lemma7,
        Statement::Lemma8,
        Statement::Lemma9,
        Statement::Prop11,
        Statement::Cor12First,
        Statement::Cor12Second,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Statement::Theorem1 => "theorem1",
            Statement::Theorem10 => "theorem10",
            Statement::Lemma6 => "lemma6",
            Statement::Lemma7 => "lemma7",
            Statement::Lemma8 => "lemma8",
            Statement::Lemma9 => "lemma9",
            Statement::Prop11 => "prop11",
            Statement::Cor12First => "cor12-first",
            Statement::Cor12Second => "cor12-second",
        }
    }

    pub fn is_matrix(&self) -> bool {
        matches!(self, Statement::Cor12First | Statement::Cor12Second)
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Statement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Statement::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Statement::ALL.iter().map(|s| s.name()).collect();
                Error::Config(format!(
                    "unknown statement '{s}' (one of {})",
                    names.join(", ")
                ))
            })
    }
}

/// Flat campaign description, read from TOML.
///
/// ```toml
/// statement = "theorem1"
/// bracket = "[[1,2],3]"
/// dim = 3
/// fields = ["1, 0, 0", "0, x1, 0", "0, 0, x2"]
/// points = 10
/// seed = 7
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub statement: Option<Statement>,
    pub bracket: Option<String>,
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<String>,
    /// Leading order of each curve, realized as `t ↦ Fl^X_{t^k}`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub orders: Vec<u32>,
    /// Highest order for the Leibniz check.
    pub order: Option<usize>,
    pub section: Option<String>,
    /// Box the fields and sections live on, one `[lo, hi]` per axis.
    pub domain: Option<Vec<[f64; 2]>>,
    /// Box random points are drawn from (90% of each axis is used).
    pub sample_box: Option<Vec<[f64; 2]>>,
    pub algebra: Option<String>,
    pub algebra_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generators: Vec<String>,
    pub points: Option<usize>,
    pub seed: Option<u64>,
    pub point_list: Option<Vec<Vec<f64>>>,
    pub h0: Option<f64>,
    pub levels: Option<usize>,
    pub stencil_order: Option<usize>,
    pub vanish_tol: Option<f64>,
    pub match_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub t_max: Option<f64>,
    pub closed_form: Option<bool>,
}

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative algebra files resolve against the config's directory
        if let (Some(file), Some(dir)) = (&cfg.algebra_file, path.parent()) {
            if file.is_relative() {
                cfg.algebra_file = Some(dir.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn statement(&self) -> Result<Statement> {
        self.statement
            .ok_or_else(|| Error::Config("no statement given".into()))
    }

    pub(crate) fn box_from(spec: &[[f64; 2]]) -> Result<BoxDomain> {
        BoxDomain::new(
            spec.iter().map(|r| r[0]).collect(),
            spec.iter().map(|r| r[1]).collect(),
        )
        .map_err(|e| Error::Config(e.to_string()))
    }

    /// Dimension from `dim`, the domain or the point list.
    pub fn dimension(&self) -> Result<usize> {
        let candidates = [
            self.dim,
            self.domain.as_ref().map(|d| d.len()),
            self.sample_box.as_ref().map(|d| d.len()),
            self.point_list
                .as_ref()
                .and_then(|p| p.first())
                .map(|p| p.len()),
        ];
        let mut dim = None;
        for c in candidates.into_iter().flatten() {
            match dim {
                None => dim = Some(c),
                Some(d) if d != c => {
                    return Err(Error::Config(format!(
                        "inconsistent dimensions {d} and {c}"
                    )))
                }
                _ => {}
            }
        }
        match dim {
            Some(0) => Err(Error::Config("dimension must be positive".into())),
            Some(d) => Ok(d),
            None => Err(Error::Config(
                "cannot infer the dimension; set 'dim'".into(),
            )),
        }
    }

    /// Domain of fields and sections, `(-10, 10)^dim` by default.
    pub fn domain_box(&self) -> Result<BoxDomain> {
        let dim = self.dimension()?;
        match &self.domain {
            Some(d) => Self::box_from(d),
            None => Ok(BoxDomain::cube(dim, 10.0)),
        }
    }

    pub fn integrator_opts(&self) -> IntegratorOpts {
        let d = IntegratorOpts::default();
        IntegratorOpts {
            abs_tol: self.abs_tol.unwrap_or(d.abs_tol),
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            t_max: self.t_max.unwrap_or(d.t_max),
            closed_form: self.closed_form.unwrap_or(d.closed_form),
        }
    }

    /// Differentiation settings; `exact_flows` selects the tighter default
    /// match tolerance.
    pub fn diff_opts(&self, exact_flows: bool) -> DiffOpts {
        let d = if exact_flows {
            DiffOpts::closed_form()
        } else {
            DiffOpts::numeric()
        };
        DiffOpts {
            h0: self.h0.or(d.h0),
            levels: self.levels.unwrap_or(d.levels),
            stencil_order: self.stencil_order.unwrap_or(d.stencil_order),
            vanish_tol: self.vanish_tol.unwrap_or(d.vanish_tol),
            match_tol: self.match_tol.unwrap_or(d.match_tol),
        }
    }
}
