//! Tables and figures derived from the results store.
//!
//! Every layout emits CSV and JSON; figure layouts also emit SVG and PNG.
//! Missing cells are written as explicit gaps (`NA` in CSV, `null` in JSON).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::baselines::test_items;
use crate::error::{Error, Result};
use crate::experiments::{
    group_scores, inversion_table, per_run_means, political_space, positions, trainsize_table, BiasReport, DataBundle,
    Method, ResultRow, SchemeReport, Summary,
};
use crate::metrics::drop_neutral_rescore;
use crate::plot::{group_color, shade, Figure, BLACK, GREY};
use crate::space::{displacement_vectors, fit_dataset_space, AnswerMatrix};
use crate::stance::Stance;
use crate::stats::{bonferroni_threshold, mean, regress, Comparison, RegressionResult, SignificanceReport};
use crate::survey::{Dataset, Group, RecodingScheme, Survey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Layout {
    Table3,
    Table4,
    Table8,
    Table11,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig10,
    Fig11,
}

impl Layout {
    pub const ALL: [Layout; 12] = [
        Layout::Table3,
        Layout::Table4,
        Layout::Table8,
        Layout::Table11,
        Layout::Fig2,
        Layout::Fig3,
        Layout::Fig4,
        Layout::Fig5,
        Layout::Fig6,
        Layout::Fig7,
        Layout::Fig10,
        Layout::Fig11,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Layout::Table3 => "table3",
            Layout::Table4 => "table4",
            Layout::Table8 => "table8",
            Layout::Table11 => "table11",
            Layout::Fig2 => "fig2",
            Layout::Fig3 => "fig3",
            Layout::Fig4 => "fig4",
            Layout::Fig5 => "fig5",
            Layout::Fig6 => "fig6",
            Layout::Fig7 => "fig7",
            Layout::Fig10 => "fig10",
            Layout::Fig11 => "fig11",
        }
    }

    pub fn is_figure(self) -> bool {
        self.name().starts_with("fig")
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Layout::ALL
            .into_iter()
            .find(|l| l.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown report layout {s:?}")))
    }
}

/// A table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Int(i64),
    Text(String),
    Missing,
}

impl Value {
    fn csv(&self) -> String {
        match self {
            Value::Num(x) if x.is_finite() => format!("{x:.6}"),
            Value::Num(_) | Value::Missing => "NA".into(),
            Value::Int(i) => i.to_string(),
            Value::Text(s) => s.clone(),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Value::Num(x) if x.is_finite() => s.serialize_f64(*x),
            Value::Num(_) | Value::Missing => s.serialize_none(),
            Value::Int(i) => s.serialize_i64(*i),
            Value::Text(t) => s.serialize_str(t),
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Num(x)
    }
}

impl From<usize> for Value {
    fn from(x: usize) -> Self {
        Value::Int(x as i64)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.into())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(x: Option<T>) -> Self {
        x.map_or(Value::Missing, Into::into)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Table {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Value::csv))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
    }

    /// Rows as objects keyed by column.
    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<BTreeMap<&str, &Value>> = self
            .rows
            .iter()
            .map(|r| self.columns.iter().map(String::as_str).zip(r).collect())
            .collect();
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "name": self.name,
            "columns": self.columns,
            "rows": rows,
        }))?)
    }
}

/// What a report is computed from.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    /// Latest rows of the store.
    pub rows: Vec<ResultRow>,
    pub bundles: BTreeMap<Survey, DataBundle>,
    /// Candidate population for the political space.
    pub population: Option<Dataset>,
}

impl ReportInputs {
    fn ok_rows<'a>(&'a self, experiment: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.experiment == experiment && r.is_ok())
    }

    fn require(&self, experiment: &str) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Report("the results store is empty".into()));
        }
        if !self.rows.iter().any(|r| r.experiment == experiment) {
            return Err(Error::Report(format!("no {experiment} rows in the results store")));
        }
        Ok(())
    }

    fn bundle(&self, survey: Survey) -> Result<&DataBundle> {
        self.bundles
            .get(&survey)
            .ok_or_else(|| Error::Report(format!("the {survey} data is needed for this layout")))
    }

    fn cell(&self, dataset: Survey, method: Method) -> Vec<&ResultRow> {
        self.ok_rows("matrix")
            .filter(|r| r.dataset == dataset && r.method == method)
            .collect()
    }

    fn failed(&self, dataset: Survey, method: Method) -> usize {
        self.rows
            .iter()
            .filter(|r| r.experiment == "matrix" && r.dataset == dataset && r.method == method && !r.is_ok())
            .count()
    }

    fn matrix_methods(&self) -> Vec<Method> {
        let mut ms: Vec<Method> = Method::MATRIX.to_vec();
        for r in self.ok_rows("matrix") {
            if !ms.contains(&r.method) {
                ms.push(r.method);
            }
        }
        ms.sort_by_key(|m| Method::ALL.iter().position(|x| x == m));
        ms
    }
}

const DATASETS: [Survey; 3] = [Survey::Smartvote, Survey::Wom, Survey::Anes];

/// Tables and optional figure of `layout`.
pub fn build(layout: Layout, inputs: &ReportInputs) -> Result<(Vec<Table>, Option<Figure>)> {
    match layout {
        Layout::Table3 => Ok((vec![score_table(inputs, "table3", |r| r.macro_f1)?], None)),
        Layout::Table4 => Ok((vec![score_table(inputs, "table4", |r| r.accuracy)?], None)),
        Layout::Table8 => Ok((vec![significance_table(inputs)?], None)),
        Layout::Table11 => Ok((vec![neutral_regression_table(inputs)?], None)),
        Layout::Fig2 => fig2(inputs),
        Layout::Fig3 => fig3(inputs),
        Layout::Fig4 => fig4(inputs),
        Layout::Fig5 => fig5(inputs),
        Layout::Fig6 => fig6(inputs),
        Layout::Fig7 => fig7(inputs),
        Layout::Fig10 => fig10(inputs),
        Layout::Fig11 => fig11(inputs),
    }
}

/// Writes every table as `{name}.csv` / `{name}.json` and the figure as
/// `{layout}.svg` / `{layout}.png` into `dir`.
pub fn emit(layout: Layout, inputs: &ReportInputs, dir: &Path) -> Result<Vec<PathBuf>> {
    let (tables, figure) = build(layout, inputs)?;
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for t in &tables {
        let csv = dir.join(format!("{}.csv", t.name));
        let json = dir.join(format!("{}.json", t.name));
        fs::write(&csv, t.to_csv()?)?;
        fs::write(&json, t.to_json()?)?;
        out.extend([csv, json]);
    }
    if let Some(f) = figure {
        out.extend(f.save(dir, layout.name())?);
    }
    Ok(out)
}

fn pct(s: Option<Summary>) -> Value {
    s.map_or(Value::Missing, |s| Value::Text(format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std)))
}

/// Method x dataset: across-run mean and s.d. of the per-run unit average.
fn score_table(inputs: &ReportInputs, name: &str, value: fn(&crate::metrics::RunScores) -> f64) -> Result<Table> {
    inputs.require("matrix")?;
    let mut cols = vec!["method".to_string()];
    for d in DATASETS {
        for suffix in ["", "_mean", "_std", "_units", "_failed"] {
            cols.push(format!("{d}{suffix}"));
        }
    }
    let mut t = Table {
        name: name.into(),
        columns: cols,
        rows: Vec::new(),
    };
    for m in inputs.matrix_methods() {
        let mut row = vec![Value::from(m.name())];
        for d in DATASETS {
            let cell = inputs.cell(d, m);
            let s = Summary::of(&per_run_means(&cell, value));
            row.push(pct(s));
            row.push(s.map(|s| 100.0 * s.mean).into());
            row.push(s.map(|s| 100.0 * s.std).into());
            row.push(cell.len().into());
            row.push(inputs.failed(d, m).into());
        }
        t.push(row);
    }
    Ok(t)
}

fn significance_table(inputs: &ReportInputs) -> Result<Table> {
    inputs.require("matrix")?;
    let mut t = Table::new(
        "table8",
        &[
            "dataset",
            "baseline",
            "metric",
            "p_value",
            "cohens_d",
            "tier",
            "bonferroni_threshold",
            "m",
            "note",
        ],
    );
    let baselines: Vec<Method> = inputs
        .matrix_methods()
        .into_iter()
        .filter(|m| *m != Method::SftGrpo)
        .collect();
    let metrics: [(&str, fn(&crate::metrics::RunScores) -> f64); 2] =
        [("f1", |r| r.macro_f1), ("accuracy", |r| r.accuracy)];
    let m = DATASETS.len() * baselines.len();
    for (metric, value) in metrics {
        for d in DATASETS {
            let ours = per_run_means(&inputs.cell(d, Method::SftGrpo), value);
            for b in &baselines {
                let theirs = per_run_means(&inputs.cell(d, *b), value);
                let cmp = Comparison {
                    method_a: Method::SftGrpo.name().into(),
                    method_b: b.name().into(),
                    model: String::new(),
                    dataset: d.name().into(),
                };
                let rep = SignificanceReport::compare(cmp, &ours, &theirs, m, 0.05);
                let mut row = vec![Value::from(d.name()), b.name().into(), metric.into()];
                match rep {
                    Ok(r) => row.extend([
                        r.p_value.into(),
                        r.cohens_d.into(),
                        serde_json::to_value(r.tier)?.as_str().unwrap_or_default().to_string().into(),
                        bonferroni_threshold(0.05, m).into(),
                        m.into(),
                        r.note.into(),
                    ]),
                    Err(e) => row.extend([
                        Value::Missing,
                        Value::Missing,
                        Value::Missing,
                        bonferroni_threshold(0.05, m).into(),
                        m.into(),
                        e.to_string().into(),
                    ]),
                }
                t.push(row);
            }
        }
    }
    Ok(t)
}

fn regression_row(label: &str, r: Option<&RegressionResult>) -> Vec<Value> {
    let mut row = vec![Value::from(label)];
    match r {
        Some(r) => row.extend([
            r.n.into(),
            r.intercept.into(),
            r.slope.into(),
            r.slope_se.into(),
            r.slope_ci95.0.into(),
            r.slope_ci95.1.into(),
            r.r.into(),
            r.r_squared.into(),
            r.p_value.into(),
            r.rmse.into(),
        ]),
        None => row.extend(std::iter::repeat_n(Value::Missing, 10)),
    }
    row
}

const REGRESSION_COLUMNS: [&str; 11] = [
    "metric",
    "n",
    "intercept",
    "slope",
    "slope_se",
    "ci95_low",
    "ci95_high",
    "r",
    "r_squared",
    "p_value",
    "rmse",
];

fn neutral_points(rows: &[&ResultRow]) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    rows.iter()
        .map(|r| ((r.neutral_base_rate(), r.mean_f1()), (r.neutral_base_rate(), r.mean_accuracy())))
        .unzip()
}

fn neutral_regression_table(inputs: &ReportInputs) -> Result<Table> {
    inputs.require("matrix")?;
    let rows = inputs.cell(Survey::Anes, Method::SftGrpo);
    if rows.is_empty() {
        return Err(Error::Report("no ANES sft+grpo rows".into()));
    }
    let (f1, acc) = neutral_points(&rows);
    let mut t = Table::new("table11", &REGRESSION_COLUMNS);
    t.push(regression_row("f1", regress(&f1).ok().as_ref()));
    t.push(regression_row("accuracy", regress(&acc).ok().as_ref()));
    Ok(t)
}

fn fig2(inputs: &ReportInputs) -> Result<(Vec<Table>, Option<Figure>)> {
    inputs.require("matrix")?;
    let bundle = inputs.bundle(Survey::Smartvote)?;
    let (model, matrix) = political_space(&bundle.dataset, inputs.population.as_ref())?;
    let rows = inputs.cell(Survey::Smartvote, Method::SftGrpo);
    let pos = positions(&rows, &bundle.dataset, &model, &matrix.question_ids, "sft+grpo")?;
    let mut fig = Figure::new("Candidates and agents", "PC1 (left-right)", "PC2 (conservative-liberal)");
    let mut population = Table::new("fig2_population", &["unit_id", "group", "x", "y"]);
    let pop = inputs.population.as_ref().unwrap_or(&bundle.dataset);
    let (pop_model, pop_matrix, _) = fit_dataset_space(pop)?;
    debug_assert_eq!(pop_model, model);
    for (id, row) in pop_matrix.unit_ids.iter().zip(&pop_matrix.rows) {
        let (x, y) = model.project(row)?;
        let g = pop.unit(id).map(|u| u.group());
        population.push(vec![id.as_str().into(), g.map(|g| g.name()).into(), x.into(), y.into()]);
        fig.point(x, y, 1.5, g.map_or(GREY, |g| shade(group_color(g), 0.35)));
    }
    let mut pairs = Table::new("fig2_positions", &["unit_id", "group", "human_x", "human_y", "agent_x", "agent_y"]);
    for p in &pos {
        pairs.push(vec![
            p.unit_id.as_str().into(),
            p.group.name().into(),
            p.human.0.into(),
            p.human.1.into(),
            p.agent.0.into(),
            p.agent.1.into(),
        ]);
        fig.line(p.human, p.agent, GREY, 1.0);
        fig.point(p.human.0, p.human.1, 5.0, group_color(p.group));
        fig.point(p.agent.0, p.agent.1, 3.0, BLACK);
    }
    let disp = displacement_table(&pos, "fig2_displacement", &mut fig);
    Ok((vec![population, pairs, disp], Some(fig)))
}

fn displacement_table(pos: &[crate::experiments::PositionPair], name: &str, fig: &mut Figure) -> Table {
    let mut t = Table::new(name, &["condition", "group", "from_x", "from_y", "dx", "dy"]);
    let mut conditions: Vec<&str> = pos.iter().map(|p| p.condition.as_str()).collect();
    conditions.dedup();
    for c in conditions {
        let sel: Vec<_> = pos.iter().filter(|p| p.condition == c).collect();
        let pairs: Vec<(Group, (f64, f64), (f64, f64))> = sel.iter().map(|p| (p.group, p.human, p.agent)).collect();
        for (g, (dx, dy)) in displacement_vectors(&pairs) {
            let hs: Vec<&(f64, f64)> = sel.iter().filter(|p| p.group == g).map(|p| &p.human).collect();
            let from = (
                mean(&hs.iter().map(|h| h.0).collect::<Vec<_>>()),
                mean(&hs.iter().map(|h| h.1).collect::<Vec<_>>()),
            );
            t.push(vec![c.into(), g.name().into(), from.0.into(), from.1.into(), dx.into(), dy.into()]);
            fig.arrow(from, (from.0 + dx, from.1 + dy), group_color(g));
        }
    }
    t
}

fn fig3(inputs: &ReportInputs) -> Result<(Vec<Table>, Option<Figure>)> {
    inputs.require("matrix")?;
    let mut t = Table::new("fig3", &["dataset", "method", "group", "f1_mean", "f1_std", "units"]);
    let mut fig = Figure::new("F1 by group", "dataset / method", "macro-F1").y_range(0.0, 1.0);
    let methods = inputs.matrix_methods();
    let mut x = 0.0;
    for d in DATASETS {
        for m in &methods {
            let rows = inputs.cell(d, *m);
            let scores: BTreeMap<Group, Summary> = group_scores(&rows, "").into_iter().map(|g| (g.group, g.f1)).collect();
            for (k, g) in Group::ALL.iter().enumerate() {
                let s = scores.get(g);
                t.push(vec![
                    d.name().into(),
                    m.name().into(),
                    g.name().into(),
                    s.map(|s| s.mean).into(),
                    s.map(|s| s.std).into(),
                    s.map_or(0, |s| s.n).into(),
                ]);
                if let Some(s) = s {
                    let bx = x + 0.25 * k as f64;
                    fig.rect(bx, 0.0, 0.22, s.mean, group_color(*g));
                    fig.line((bx + 0.11, s.mean - s.std), (bx + 0.11, s.mean + s.std), BLACK, 1.0);
                }
            }
            x += 1.0;
        }
        x += 0.5;
    }
    Ok((vec![t], Some(fig)))
}

fn fig4(inputs: &ReportInputs) -> Result<(Vec<Table>, Option<Figure>)> {
    inputs.require("matrix")?;
    let bundle = inputs.bundle(Survey::Anes)?;
    let rows = inputs.cell(Survey::Anes, Method::SftGrpo);
    if rows.is_empty() {
        return Err(Error::Report("no ANES sft+grpo rows".into()));
    }
    let mut units = Table::new(
        "fig4_units",
        &["unit_id", "group", "neutral_base_rate", "f1", "accuracy", "f1_no_neutral", "accuracy_no_neutral"],
    );
    let mut recall: BTreeMap<(Group, Stance), Vec<f64>> = BTreeMap::new();
    let mut drop: BTreeMap<Group, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut fig = Figure::new("Performance vs. Neutral base rate", "Neutral base rate", "macro-F1");
    for r in &rows {
        let unit = bundle
            .dataset
            .unit(&r.unit_id)
            .ok_or_else(|| Error::Report(format!("unit {} missing from the ANES data", r.unit_id)))?;
        let (qids, truths) = test_items(unit, &bundle.split);
        let mut dn_f1 = Vec::new();
        let mut dn_acc = Vec::new();
        for run in &r.runs {
            for (s, v) in &run.per_class_recall {
                recall.entry((r.group, *s)).or_default().push(*v);
            }
            let preds: Vec<Option<Stance>> = qids.iter().map(|q| run.predictions.get(*q).copied().flatten()).collect();
            if let Ok((f, a)) = drop_neutral_rescore(&preds, &truths) {
                dn_f1.push(f);
                dn_acc.push(a);
            }
        }
        let (f, a) = (
            (!dn_f1.is_empty()).then(|| mean(&dn_f1)),
            (!dn_acc.is_empty()).then(|| mean(&dn_acc)),
        );
        let e = drop.entry(r.group).or_default();
        e.0.push(r.mean_f1());
        if let Some(f) = f {
            e.1.push(f);
        }
        units.push(vec![
            r.unit_id.as_str().into(),
            r.group.name().into(),
            r.neutral_base_rate().into(),
            r.mean_f1().into(),
            r.mean_accuracy().into(),
            f.into(),
            a.into(),
        ]);
        fig.point(r.neutral_base_rate(), r.mean_f1(), 4.0, group_color(r.group));
    }
    let (f1_pts, acc_pts) = neutral_points(&rows);
    let reg_f1 = regress(&f1_pts).ok();
    let mut reg = Table::new("fig4_regression", &REGRESSION_COLUMNS);
    reg.push(regression_row("f1", reg_f1.as_ref()));
    reg.push(regression_row("accuracy", regress(&acc_pts).ok().as_ref()));
    if let Some(g) = reg_f1 {
        let xs: Vec<f64> = f1_pts.iter().map(|p| p.0).collect();
        let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, x| (a.0.min(*x), a.1.max(*x)));
        fig.line((lo, g.intercept + g.slope * lo), (hi, g.intercept + g.slope * hi), BLACK, 1.5);
    }
    let mut rec = Table::new("fig4_recall", &["group", "class", "recall_mean", "n"]);
    for g in Group::ALL {
        for s in Stance::ALL {
            let v = recall.get(&(g, s));
            rec.push(vec![
                g.name().into(),
                s.label().into(),
                v.map(|v| mean(v)).into(),
                v.map_or(0, Vec::len).into(),
            ]);
        }
    }
    let mut dn = Table::new("fig4_drop_neutral", &["group", "f1", "f1_no_neutral"]);
    for g in Group::ALL {
        let v = drop.get(&g);
        dn.push(vec![
            g.name().into(),
            v.filter(|v| !v.0.is_empty()).map(|v| mean(&v.0)).into(),
            v.filter(|v| !v.1.is_empty()).map(|v| mean(&v.1)).into(),
        ]);
    }
    Ok((vec![units, reg, rec, dn], Some(fig)))
}

fn bias_report(inputs: &ReportInputs) -> Result<BiasReport> {
    inputs.require("bias")?;
    BiasReport::from_rows(&inputs.rows, inputs.bundle(Survey::Smartvote)?, inputs.population.as_ref())
}

fn fig5(inputs: &ReportInputs) -> Result<(Vec<Table>, Option<Figure>)> {
    let rep = bias_report(inputs)?;
    let mut t = Table::new("fig5", &["condition", "group", "f1_mean", "f1_std", "units"]);
    let mut fig = Figure::new("F1 by SFT corpus bias", "corpus", "macro-F1").y_range(0.0, 1.0);
    for (ci, c) in crate::experiments::BIAS_CONDITIONS.iter().enumerate() {
        for (k, g) in Group::ALL.iter().enumerate() {
            let s = rep.scores.iter().find(|s| s.condition == c.name() && s.group == *g);
            t.push(vec![
                c.name().into(),
                g.name().into(),
                s.map(|s| s.f1.mean).into(),
                s.map(|s| s.f1.std).into(),
                s.map_or(0, |s| s.f1.n).into(),
            ]);
            if let Some(s) = s {
                let x = ci as f64 + 0.25 * k as f64;
                fig.rect(x, 0.0, 0.22, s.f1.mean, group_color(*g));
            }
        }
        fig.text(ci as f64 + 0.35, -0.04, c.name());
    }
    Ok((vec![t], Some(fig)))
}

fn fig6(inputs: &ReportInputs) -> Result<(Vec<Table>, Option<Figure>)> {
    let rep = bias_report(inputs)?;
    let mut pos = Table::new(
        "fig6_positions",
        &["condition", "unit_id", "group", "human_x", "human_y", "agent_x", "agent_y"],
    );
    for p in &rep.positions {
        pos.push(vec![
            p.condition.as_str().into(),
            p.unit_id.as_str().into(),
            p.group.name().into(),
            p.human.0.into(),
            p.human.1.into(),
            p.agent.0.into(),
            p.agent.1.into(),
        ]);
    }
    let mut t = Table::new("fig6_displacement", &["condition", "group", "dx", "dy"]);
    let mut fig = Figure::new("Group-mean displacement", "dPC1", "dPC2");
    for (ci, d) in rep.displacements.iter().enumerate() {
        t.push(vec![d.condition.as_str().into(), d.group.name().into(), d.dx.into(), d.dy.into()]);
        fig.arrow((0.0, 0.0), (d.dx, d.dy), group_color(d.group));
        if ci % 3 == 0 {
            fig.text(d.dx, d.dy, d.condition.as_str());
        }
    }
    fig.point(0.0, 0.0, 3.0, BLACK);
    Ok((vec![t, pos], Some(fig)))
}

fn fig7(inputs: &ReportInputs) -> Result<(Vec<Table>, Option<Figure>)> {
    inputs.require("inversion")?;
    let table = inversion_table(&inputs.rows, inputs.bundle(Survey::Smartvote)?, inputs.population.as_ref())?;
    let mut t = Table::new("fig7", &["unit_id", "group", "pc1", "f1_orig", "f1_inv", "delta"]);
    let mut fig = Figure::new("F1 before and after inversion", "PC1", "macro-F1").y_range(0.0, 1.0);
    for r in &table {
        t.push(vec![
            r.unit_id.as_str().into(),
            r.group.name().into(),
            r.pc1.into(),
            r.f1_orig.into(),
            r.f1_inv.into(),
            r.delta.into(),
        ]);
        fig.line((r.pc1, r.f1_orig), (r.pc1, r.f1_inv), GREY, 1.0);
        fig.point(r.pc1, r.f1_orig, 4.0, group_color(r.group));
        fig.point(r.pc1, r.f1_inv, 2.5, BLACK);
    }
    Ok((vec![t], Some(fig)))
}

fn fig10(inputs: &ReportInputs) -> Result<(Vec<Table>, Option<Figure>)> {
    inputs.require("recoding")?;
    let bundle = inputs.bundle(Survey::Anes)?;
    let mut conf = Table::new("fig10_confusion", &["scheme", "truth", "prediction", "count"]);
    let mut reg = Table::new(
        "fig10_regression",
        &[
            "scheme",
            "metric",
            "n",
            "intercept",
            "slope",
            "slope_se",
            "ci95_low",
            "ci95_high",
            "r",
            "r_squared",
            "p_value",
            "rmse",
        ],
    );
    let mut fig = Figure::new("Confusion by recoding scheme", "prediction", "truth");
    let labels = ["A", "B", "C", "unresolved"];
    for (si, scheme) in [RecodingScheme::Conservative, RecodingScheme::Aggressive].iter().enumerate() {
        let variant = bundle.recoded(*scheme)?;
        let rows: Vec<&ResultRow> = inputs
            .ok_rows("recoding")
            .filter(|r| r.config.recoding_scheme == *scheme)
            .collect();
        let rep = SchemeReport::from_rows(*scheme, &rows, &variant.dataset, &variant.split);
        let total: usize = rep.confusion.iter().flatten().sum::<usize>().max(1);
        for (ti, row) in rep.confusion.iter().enumerate() {
            for (pi, n) in row.iter().enumerate() {
                conf.push(vec![scheme.key().into(), labels[ti].into(), labels[pi].into(), (*n).into()]);
                let x0 = si as f64 * 5.0 + pi as f64;
                let y0 = (rep.confusion.len() - 1 - ti) as f64;
                fig.rect(x0, y0, 0.95, 0.95, shade([40, 80, 160], 3.0 * *n as f64 / total as f64));
                fig.text(x0 + 0.47, y0 + 0.4, n.to_string());
            }
        }
        for (metric, r) in [("f1", &rep.regression_f1), ("accuracy", &rep.regression_accuracy)] {
            let mut row = vec![Value::from(scheme.key())];
            row.extend(regression_row(metric, r.as_ref()));
            reg.push(row);
        }
        fig.text(si as f64 * 5.0 + 2.0, 3.3, scheme.key());
    }
    Ok((vec![conf, reg], Some(fig)))
}

fn fig11(inputs: &ReportInputs) -> Result<(Vec<Table>, Option<Figure>)> {
    inputs.require("trainsize")?;
    let rows = trainsize_table(&inputs.rows);
    let mut t = Table::new(
        "fig11",
        &["unit_id", "party_or_ideology", "fraction", "train_questions", "f1", "accuracy"],
    );
    let mut fig = Figure::new("Impact of training-set size", "fraction of train questions", "macro-F1")
        .x_range(0.0, 1.05)
        .y_range(0.0, 1.0);
    let mut by_unit: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    let mut by_fraction: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        t.push(vec![
            r.unit_id.as_str().into(),
            r.party_or_ideology.as_str().into(),
            r.fraction.into(),
            r.train_questions.into(),
            r.f1.into(),
            r.accuracy.into(),
        ]);
        by_unit.entry(&r.unit_id).or_default().push((r.fraction, r.f1));
        by_fraction.entry(format!("{:.2}", r.fraction)).or_default().push(r.f1);
    }
    for (u, pts) in &by_unit {
        let g = inputs
            .rows
            .iter()
            .find(|r| r.unit_id == *u)
            .map_or(GREY, |r| group_color(r.group));
        for w in pts.windows(2) {
            fig.line(w[0], w[1], g, 1.5);
        }
        for p in pts {
            fig.point(p.0, p.1, 3.0, g);
        }
    }
    let mut med = Table::new("fig11_median", &["fraction", "median_f1", "units"]);
    for (f, v) in &by_fraction {
        med.push(vec![f.as_str().into(), median(v).into(), v.len().into()]);
    }
    Ok((vec![t, med], Some(fig)))
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Positions of every candidate of the population; convenience for plots
/// that only need the background cloud.
pub fn population_positions(population: &Dataset) -> Result<Vec<(String, f64, f64)>> {
    let (model, matrix, _) = fit_dataset_space(population)?;
    let AnswerMatrix { unit_ids, rows, .. } = matrix;
    unit_ids
        .into_iter()
        .zip(rows)
        .map(|(id, r)| model.project(&r).map(|(x, y)| (id, x, y)))
        .collect()
}
