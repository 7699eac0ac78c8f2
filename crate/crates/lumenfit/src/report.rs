//! Publication-style text tables and their CSV twins. Text cells are formatted
//! from the same values written to CSV; nothing is recomputed here.

use std::fmt::Write as _;

use lumenfit_core::diagnostics::TestResult;
use lumenfit_core::feature_select::ImportanceReport;
use lumenfit_core::gam::{GamFit, SmoothPoint, SmoothTest};
use lumenfit_core::linear_models::{significance_stars, AnovaTable, FitResult, Term};
use lumenfit_core::panel::{DropReason, MergeReport};
use lumenfit_core::summary::SummaryStats;

pub const STAR_NOTE: &str = "Note: *p<0.1; **p<0.05; ***p<0.01";

pub fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

/// `5.358*** (1.442)`.
pub fn coef_cell(estimate: f64, std_error: f64, p: f64) -> String {
    format!("{}{} ({})", fmt3(estimate), significance_stars(p), fmt3(std_error))
}

fn csv_string(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn pad(out: &mut String, cells: &[String], widths: &[usize]) {
    for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
        if i == 0 {
            let _ = write!(out, "{c:<w$}");
        } else {
            let _ = write!(out, "  {c:>w$}");
        }
    }
    out.push('\n');
}

fn rule(widths: &[usize]) -> String {
    let total = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
    "-".repeat(total) + "\n"
}

/// One column of a regression table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableColumn {
    pub label: String,
    pub terms: Vec<Term>,
    pub n: usize,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    /// F statistic with its two df.
    pub f: Option<(f64, f64, f64)>,
}

impl TableColumn {
    pub fn from_fit(label: &str, fit: &FitResult) -> Self {
        Self {
            label: label.to_string(),
            terms: fit.terms.clone(),
            n: fit.n,
            r_squared: fit.r_squared,
            adj_r_squared: fit.adj_r_squared,
            f: fit.f_stat.is_finite().then_some((fit.f_stat, fit.f_df.0 as f64, fit.f_df.1 as f64)),
        }
    }
}

fn term_label(name: &str) -> &str {
    if name == "(Intercept)" {
        "Constant"
    } else {
        name
    }
}

/// Fixed-width table with SEs beneath coefficients, plus the CSV with one
/// row per (column, term) and the fit statistics.
pub fn regression_table(title: &str, columns: &[TableColumn]) -> (String, String) {
    let mut names: Vec<String> = Vec::new();
    for c in columns {
        for t in &c.terms {
            if t.name != "(Intercept)" && !names.contains(&t.name) {
                names.push(t.name.clone());
            }
        }
    }
    if columns.iter().any(|c| c.terms.iter().any(|t| t.name == "(Intercept)")) {
        names.push("(Intercept)".to_string());
    }

    let mut body: Vec<Vec<String>> = Vec::new();
    for name in &names {
        let mut est = vec![term_label(name).to_string()];
        let mut se = vec![String::new()];
        for c in columns {
            match c.terms.iter().find(|t| &t.name == name) {
                Some(t) => {
                    est.push(format!("{}{}", fmt3(t.estimate), significance_stars(t.p_value)));
                    se.push(format!("({})", fmt3(t.std_error)));
                }
                None => {
                    est.push(String::new());
                    se.push(String::new());
                }
            }
        }
        body.push(est);
        body.push(se);
    }
    let has_terms = !names.is_empty();
    let mut stats: Vec<Vec<String>> = Vec::new();
    if has_terms {
        let row = |label: &str, f: &dyn Fn(&TableColumn) -> String| {
            let mut r = vec![label.to_string()];
            r.extend(columns.iter().map(f));
            r
        };
        stats.push(row("Observations", &|c| c.n.to_string()));
        stats.push(row("R2", &|c| fmt3(c.r_squared)));
        stats.push(row("Adjusted R2", &|c| fmt3(c.adj_r_squared)));
        stats.push(row("F Statistic", &|c| match c.f {
            Some((f, d1, d2)) => format!("{} (df = {d1}; {d2})", fmt3(f)),
            None => String::new(),
        }));
    }

    let mut header = vec![String::new()];
    header.extend(columns.iter().map(|c| c.label.clone()));
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in body.iter().chain(&stats) {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut text = format!("{title}\n");
    text.push_str(&rule(&widths));
    pad(&mut text, &header, &widths);
    text.push_str(&rule(&widths));
    for r in &body {
        pad(&mut text, r, &widths);
    }
    if has_terms {
        text.push_str(&rule(&widths));
        for r in &stats {
            pad(&mut text, r, &widths);
        }
    }
    text.push_str(&rule(&widths));
    text.push_str(STAR_NOTE);
    text.push('\n');

    let mut rows = Vec::new();
    for c in columns {
        for t in &c.terms {
            rows.push(vec![
                c.label.clone(),
                t.name.clone(),
                t.estimate.to_string(),
                t.std_error.to_string(),
                t.t_value.to_string(),
                t.p_value.to_string(),
                significance_stars(t.p_value).to_string(),
            ]);
        }
        let stat = |name: &str, v: String| vec![c.label.clone(), name.to_string(), v, String::new(), String::new(), String::new(), String::new()];
        rows.push(stat("observations", c.n.to_string()));
        rows.push(stat("r_squared", c.r_squared.to_string()));
        rows.push(stat("adj_r_squared", c.adj_r_squared.to_string()));
        if let Some((f, d1, d2)) = c.f {
            rows.push(stat("f_statistic", f.to_string()));
            rows.push(stat("f_df1", d1.to_string()));
            rows.push(stat("f_df2", d2.to_string()));
        }
    }
    let csv = csv_string(
        &["model", "term", "estimate", "std_error", "t_value", "p_value", "stars"],
        &rows,
    );
    (text, csv)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_default()
}

/// ANOVA layout with Res.Df, RSS, Df, Sum of Sq, F and Pr(>F).
pub fn anova_table(title: &str, t: &AnovaTable) -> (String, String) {
    let header: Vec<String> = ["", "Res.Df", "RSS", "Df", "Sum of Sq", "F", "Pr(>F)", ""]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = t
        .labels
        .iter()
        .zip(&t.rows)
        .map(|(label, r)| {
            vec![
                label.clone(),
                r.res_df.to_string(),
                format!("{:.4}", r.rss),
                r.df.map(|d| d.to_string()).unwrap_or_default(),
                opt(r.sum_sq, 4),
                opt(r.f, 4),
                opt(r.p_value, 5),
                r.p_value.map(significance_stars).unwrap_or("").to_string(),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut text = format!("{title}\n");
    pad(&mut text, &header, &widths);
    for r in &rows {
        pad(&mut text, r, &widths);
    }
    text.push_str(STAR_NOTE);
    text.push('\n');
    let csv_rows: Vec<Vec<String>> = t
        .labels
        .iter()
        .zip(&t.rows)
        .map(|(label, r)| {
            vec![
                label.clone(),
                r.res_df.to_string(),
                r.rss.to_string(),
                r.df.map(|d| d.to_string()).unwrap_or_default(),
                r.sum_sq.map(|v| v.to_string()).unwrap_or_default(),
                r.f.map(|v| v.to_string()).unwrap_or_default(),
                r.p_value.map(|v| v.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    let csv = csv_string(&["model", "res_df", "rss", "df", "sum_sq", "f", "p_value"], &csv_rows);
    (text, csv)
}

/// One row of the descriptive table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variable: String,
    pub pooled: SummaryStats,
    /// Mean by survey year, in year order.
    pub year_means: Vec<f64>,
}

pub fn summary_table(title: &str, years: &[i32], rows: &[SummaryRow]) -> (String, String) {
    let mut header: Vec<String> = ["Variable", "Mean", "St. Dev.", "Min", "Max"].iter().map(|s| s.to_string()).collect();
    header.extend(years.iter().map(|y| format!("{y} Mean")));
    let mut cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut c = vec![
                r.variable.clone(),
                fmt3(r.pooled.mean),
                fmt3(r.pooled.std_dev),
                fmt3(r.pooled.min),
                fmt3(r.pooled.max),
            ];
            c.extend(r.year_means.iter().map(|m| fmt3(*m)));
            c
        })
        .collect();
    if let Some(r) = rows.first() {
        let mut n = vec!["N".to_string(), r.pooled.n.to_string()];
        n.resize(header.len(), String::new());
        cells.push(n);
    }
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in &cells {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut text = format!("{title}\n");
    text.push_str(&rule(&widths));
    pad(&mut text, &header, &widths);
    text.push_str(&rule(&widths));
    for r in &cells {
        pad(&mut text, r, &widths);
    }
    text.push_str(&rule(&widths));
    let mut csv_header = vec!["variable", "n", "mean", "std_dev", "min", "max", "skewness", "excess_kurtosis"];
    let year_cols: Vec<String> = years.iter().map(|y| format!("mean_{y}")).collect();
    csv_header.extend(year_cols.iter().map(String::as_str));
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let s = &r.pooled;
            let mut c = vec![
                r.variable.clone(),
                s.n.to_string(),
                s.mean.to_string(),
                s.std_dev.to_string(),
                s.min.to_string(),
                s.max.to_string(),
                s.skewness.to_string(),
                s.excess_kurtosis.to_string(),
            ];
            c.extend(r.year_means.iter().map(|m| m.to_string()));
            c
        })
        .collect();
    (text, csv_string(&csv_header, &csv_rows))
}

pub fn merge_report(r: &MergeReport) -> (String, String) {
    let mut lines: Vec<(String, String)> = vec![
        ("matching radius (km)".into(), r.radius_km.to_string()),
        ("survey clusters matched".into(), format!("{} of {}", r.clusters_matched, r.clusters_total)),
        ("child records read".into(), r.input_rows.to_string()),
    ];
    for reason in DropReason::ALL {
        lines.push((format!("dropped: {}", reason.label()), r.dropped_for(reason).to_string()));
    }
    lines.push(("retained".into(), r.retained.to_string()));
    let w = lines.iter().map(|l| l.0.len()).max().unwrap_or(0) + 2;
    let mut text = String::from("Merge report\n");
    for (k, v) in &lines {
        let _ = writeln!(text, "  {k:<w$}{v}");
    }
    let mut rows = vec![
        vec!["radius_km".to_string(), r.radius_km.to_string()],
        vec!["clusters_matched".to_string(), r.clusters_matched.to_string()],
        vec!["clusters_total".to_string(), r.clusters_total.to_string()],
        vec!["input_rows".to_string(), r.input_rows.to_string()],
    ];
    for reason in DropReason::ALL {
        rows.push(vec![format!("dropped_{}", reason.label()), r.dropped_for(reason).to_string()]);
    }
    rows.push(vec!["retained".to_string(), r.retained.to_string()]);
    (text, csv_string(&["item", "value"], &rows))
}

pub fn importance_csv(reports: &[(String, ImportanceReport)]) -> String {
    let mut rows = Vec::new();
    for (outcome, r) in reports {
        for (f, s) in r.features.iter().zip(&r.scores) {
            rows.push(vec![outcome.clone(), f.clone(), r.method.name().to_string(), s.to_string()]);
        }
    }
    csv_string(&["outcome", "feature", "method", "score"], &rows)
}

/// CV error by outcome and model.
pub fn cv_table(rows: &[(String, String, f64)]) -> (String, String) {
    let mut text = String::from("Cross-validated test error (MSE)\n");
    for (o, m, e) in rows {
        let _ = writeln!(text, "  {o:<12}{m:<18}{e:>12.4}");
    }
    let csv_rows: Vec<Vec<String>> = rows.iter().map(|(o, m, e)| vec![o.clone(), m.clone(), e.to_string()]).collect();
    (text, csv_string(&["outcome", "model", "cv_mse"], &csv_rows))
}

/// A named test or a reason it could not be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticLine {
    pub outcome: String,
    pub test: String,
    pub result: Result<TestResult, String>,
    pub weights: Option<String>,
}

pub fn diagnostics_block(lines: &[DiagnosticLine]) -> (String, String) {
    let mut text = String::from("Specification diagnostics\n");
    let mut rows = Vec::new();
    for l in lines {
        match &l.result {
            Ok(t) => {
                let df = match t.df2 {
                    Some(d2) => format!("df = ({}, {})", t.df1, d2),
                    None => format!("df = {}", t.df1),
                };
                let _ = writeln!(
                    text,
                    "  {:<12}{:<20}statistic = {:.4}, {df}, p = {:.5}",
                    l.outcome, l.test, t.statistic, t.p_value
                );
                rows.push(vec![
                    l.outcome.clone(),
                    l.test.clone(),
                    t.statistic.to_string(),
                    t.df1.to_string(),
                    t.df2.map(|d| d.to_string()).unwrap_or_default(),
                    t.p_value.to_string(),
                    String::new(),
                ]);
            }
            Err(why) => {
                let _ = writeln!(text, "  {:<12}{:<20}not computed: {why}", l.outcome, l.test);
                rows.push(vec![
                    l.outcome.clone(),
                    l.test.clone(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    why.clone(),
                ]);
            }
        }
        if let Some(w) = &l.weights {
            let _ = writeln!(text, "  {:<12}weights: {w}", "");
        }
    }
    let csv = csv_string(&["outcome", "test", "statistic", "df1", "df2", "p_value", "note"], &rows);
    (text, csv)
}

/// Parametric block, fit statistics and the smooth-significance block of
/// one additive model.
pub fn gam_block(outcome: &str, fit: &GamFit, test: Option<&SmoothTest>, delta: Option<f64>) -> (String, Vec<Vec<String>>) {
    let mut text = format!("Additive model: {outcome}\n");
    let mut rows = Vec::new();
    let w = fit.terms.iter().map(|t| term_label(&t.name).len()).max().unwrap_or(8).max(12);
    for t in &fit.terms {
        let _ = writeln!(
            text,
            "  {:<w$}  {}",
            term_label(&t.name),
            coef_cell(t.estimate, t.std_error, t.p_value)
        );
        rows.push(vec![
            outcome.to_string(),
            t.name.clone(),
            t.estimate.to_string(),
            t.std_error.to_string(),
            t.p_value.to_string(),
        ]);
    }
    let _ = writeln!(text, "  {:<w$}  {}", "Observations", fit.n);
    let _ = writeln!(text, "  {:<w$}  {}", "Adjusted R2", fmt3(fit.adj_r_squared));
    let _ = writeln!(text, "  {:<w$}  {}", "Log Likelihood", fmt3(fit.log_likelihood));
    let mut stat = |name: &str, v: f64| rows.push(vec![outcome.to_string(), name.to_string(), v.to_string(), String::new(), String::new()]);
    stat("observations", fit.n as f64);
    stat("adj_r_squared", fit.adj_r_squared);
    stat("log_likelihood", fit.log_likelihood);
    stat("deviance_explained", fit.deviance_explained);
    if let Some((c, s)) = fit.score {
        let _ = writeln!(text, "  {:<w$}  {}", c.label(), fmt3(s));
        stat(&c.label().to_ascii_lowercase(), s);
    }
    if let Some(d) = delta {
        let _ = writeln!(text, "  {:<w$}  {:.2}%", "Deviance gain", d);
        stat("deviance_delta_pct", d);
    }
    if let Some(s) = &fit.smooth {
        let _ = writeln!(text, "  Approximate significance of smooth terms:");
        let _ = writeln!(text, "  {:<16}{:>8}{:>8}{:>8}{:>10}", "", "edf", "Ref.df", "F", "p-value");
        match test {
            Some(t) => {
                let _ = writeln!(
                    text,
                    "  {:<16}{:>8.3}{:>8.3}{:>8.2}{:>10.4}",
                    format!("s({})", s.name),
                    t.edf,
                    t.ref_df,
                    t.f,
                    t.p_value
                );
                stat("smooth_edf", t.edf);
                stat("smooth_ref_df", t.ref_df);
                stat("smooth_f", t.f);
                stat("smooth_p_value", t.p_value);
            }
            None => {
                let _ = writeln!(text, "  {:<16}{:>8.3}  (effectively linear, test skipped)", format!("s({})", s.name), s.edf);
                stat("smooth_edf", s.edf);
            }
        }
    }
    (text, rows)
}

pub fn gam_csv(rows: &[Vec<String>]) -> String {
    csv_string(&["outcome", "term", "estimate", "std_error", "p_value"], rows)
}

pub fn gam_curve_csv(curves: &[(String, Vec<SmoothPoint>)]) -> String {
    let mut rows = Vec::new();
    for (o, pts) in curves {
        for p in pts {
            rows.push(vec![o.clone(), p.x.to_string(), p.fit.to_string(), p.lower.to_string(), p.upper.to_string()]);
        }
    }
    csv_string(&["outcome", "x", "smooth", "lower", "upper"], &rows)
}

/// `(group, grid_point, density)` rows.
pub fn kde_csv(curves: &[(String, Vec<f64>, Vec<f64>)]) -> String {
    let mut rows = Vec::new();
    for (g, grid, dens) in curves {
        for (x, d) in grid.iter().zip(dens) {
            rows.push(vec![g.clone(), x.to_string(), d.to_string()]);
        }
    }
    csv_string(&["group", "grid_point", "density"], &rows)
}

/// `(outcome, grid, fit, lower, upper)` rows; undefined values are blank.
pub fn npreg_csv(curves: &[(String, lumenfit_core::nonparam::SmoothCurve)]) -> String {
    let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut rows = Vec::new();
    for (name, c) in curves {
        for p in &c.points {
            rows.push(vec![name.clone(), p.x.to_string(), o(p.fit), o(p.lower), o(p.upper)]);
        }
    }
    csv_string(&["outcome", "grid", "fit", "lower", "upper"], &rows)
}
