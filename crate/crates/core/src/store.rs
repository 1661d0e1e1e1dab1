//! Full-width parameter tables whose column prefixes are the sub-models.
//!
//! Every symbol a score function reads lives in its own table of width `d_n`.
//! Sub-model `M_i` is the first `d_i` columns of every table, so cropping is
//! column truncation and needs no retraining.

use std::f64::consts::TAU;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage element of a parameter table.
pub trait Real:
    Copy + Default + PartialEq + PartialOrd + fmt::Debug + Send + Sync + 'static
{
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Real for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreKind {
    TransE,
    SimplE,
    RotatE,
    PairRE,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 4] = [
        ScoreKind::TransE,
        ScoreKind::SimplE,
        ScoreKind::RotatE,
        ScoreKind::PairRE,
    ];

    pub fn id(self) -> u8 {
        match self {
            ScoreKind::TransE => 0,
            ScoreKind::SimplE => 1,
            ScoreKind::RotatE => 2,
            ScoreKind::PairRE => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::TransE => "transe",
            ScoreKind::SimplE => "simple",
            ScoreKind::RotatE => "rotate",
            ScoreKind::PairRE => "pairre",
        }
    }

    pub fn layout(self) -> ComponentLayout {
        use RowRole::{Entity, Relation};
        const TRANSE: &[TableSpec] = &[
            TableSpec::new("entity", Entity),
            TableSpec::new("relation", Relation),
        ];
        const SIMPLE: &[TableSpec] = &[
            TableSpec::new("entity_head", Entity),
            TableSpec::new("entity_tail", Entity),
            TableSpec::new("relation", Relation),
            TableSpec::new("relation_inv", Relation),
        ];
        const ROTATE: &[TableSpec] = &[
            TableSpec::new("entity_re", Entity),
            TableSpec::new("entity_im", Entity),
            TableSpec::new("relation_phase", Relation),
        ];
        const PAIRRE: &[TableSpec] = &[
            TableSpec::new("entity", Entity),
            TableSpec::new("relation_h", Relation),
            TableSpec::new("relation_t", Relation),
        ];
        let specs = match self {
            ScoreKind::TransE => TRANSE,
            ScoreKind::SimplE => SIMPLE,
            ScoreKind::RotatE => ROTATE,
            ScoreKind::PairRE => PAIRRE,
        };
        ComponentLayout { kind: self, specs }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ScoreKind::TransE),
            "simple" => Ok(ScoreKind::SimplE),
            "rotate" => Ok(ScoreKind::RotatE),
            "pairre" => Ok(ScoreKind::PairRE),
            _ => Err(Error::UnknownScoreFunction(s.to_owned())),
        }
    }
}

/// Distance norm for the translational/rotational score functions.
///
/// For RotatE, `L1` is the sum of complex moduli and `L2` the Euclidean norm
/// over all real coordinates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    L1,
    #[default]
    L2,
}

impl Norm {
    pub fn id(self) -> u8 {
        match self {
            Norm::L2 => 0,
            Norm::L1 => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Norm::L2),
            1 => Some(Norm::L1),
            _ => None,
        }
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "1" => Ok(Norm::L1),
            "l2" | "2" => Ok(Norm::L2),
            _ => Err(Error::InvalidConfig(format!("unknown norm `{s}`"))),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreFunction {
    pub kind: ScoreKind,
    /// Ignored by SimplE.
    pub norm: Norm,
}

impl ScoreFunction {
    pub fn new(kind: ScoreKind, norm: Norm) -> Self {
        Self { kind, norm }
    }
}

impl From<ScoreKind> for ScoreFunction {
    fn from(kind: ScoreKind) -> Self {
        Self::new(kind, Norm::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowRole {
    Entity,
    Relation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableSpec {
    pub name: &'static str,
    pub role: RowRole,
}

impl TableSpec {
    const fn new(name: &'static str, role: RowRole) -> Self {
        Self { name, role }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComponentLayout {
    pub kind: ScoreKind,
    pub specs: &'static [TableSpec],
}

impl ComponentLayout {
    pub fn rows(&self, role: RowRole, num_entities: usize, num_relations: usize) -> usize {
        match role {
            RowRole::Entity => num_entities,
            RowRole::Relation => num_relations,
        }
    }
}

/// Strictly increasing sub-model widths `d_1 < … < d_n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct DimensionSchedule(Vec<usize>);

impl DimensionSchedule {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSchedule("schedule is empty".into()));
        }
        if dims[0] == 0 {
            return Err(Error::InvalidSchedule("dimensions must be positive".into()));
        }
        if let Some(w) = dims.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSchedule(format!(
                "dimensions must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self(dims))
    }

    /// Parse `start:stop:step` (stop included when reachable), a comma list,
    /// or a single width.
    pub fn parse_spec(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let bad = |what: &str| Error::InvalidSchedule(format!("`{spec}`: {what}"));
        let num = |s: &str| -> Result<usize> {
            s.trim()
                .parse::<usize>()
                .map_err(|_| bad(&format!("`{}` is not a non-negative integer", s.trim())))
        };
        if spec.contains(':') {
            let parts: Vec<&str> = spec.split(':').collect();
            if parts.len() != 3 {
                return Err(bad("range form is start:stop:step"));
            }
            let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if step == 0 {
                return Err(bad("step must be positive"));
            }
            if start > stop {
                return Err(bad("start exceeds stop"));
            }
            let count = (stop - start) / step + 1;
            if count > 1 << 20 {
                return Err(bad("range is too long"));
            }
            let dims = (0..count).map(|k| start + k * step).collect();
            return Self::new(dims);
        }
        let dims = spec.split(',').map(num).collect::<Result<Vec<_>>>()?;
        Self::new(dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    /// Number of sub-models `n`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Width of sub-model `i` (1-based).
    pub fn dim(&self, i: usize) -> Result<usize> {
        self.check_index(i)?;
        Ok(self.0[i - 1])
    }

    pub fn full_dim(&self) -> usize {
        *self.0.last().expect("schedule is nonempty")
    }

    pub fn check_index(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.0.len() {
            return Err(Error::SubModelOutOfRange {
                index: i,
                count: self.0.len(),
            });
        }
        Ok(())
    }

    /// 1-based index of the sub-model with width `dim`.
    pub fn index_of(&self, dim: usize) -> Result<usize> {
        self.0
            .iter()
            .position(|&d| d == dim)
            .map(|p| p + 1)
            .ok_or_else(|| Error::DimNotInSchedule {
                dim,
                valid: self.0.clone(),
            })
    }

    /// Schedule keeping widths below `dim` and ending at `dim`.
    pub fn truncated(&self, dim: usize) -> Result<Self> {
        let mut dims: Vec<usize> = self.0.iter().copied().filter(|&d| d < dim).collect();
        dims.push(dim);
        Self::new(dims)
    }
}

impl TryFrom<Vec<usize>> for DimensionSchedule {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DimensionSchedule> for Vec<usize> {
    fn from(s: DimensionSchedule) -> Self {
        s.0
    }
}

impl fmt::Display for DimensionSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Learnable scaling parameters for the positive weights, negative weights
/// and dynamic loss weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scalars<R> {
    pub w1: R,
    pub w2: R,
    pub w3: R,
}

impl<R: Real> Scalars<R> {
    pub fn ones() -> Self {
        Self {
            w1: R::from_f64(1.0),
            w2: R::from_f64(1.0),
            w3: R::from_f64(1.0),
        }
    }

    pub fn get(&self, k: usize) -> R {
        match k {
            0 => self.w1,
            1 => self.w2,
            2 => self.w3,
            _ => panic!("scalar index {k} out of range"),
        }
    }

    pub fn get_mut(&mut self, k: usize) -> &mut R {
        match k {
            0 => &mut self.w1,
            1 => &mut self.w2,
            2 => &mut self.w3,
            _ => panic!("scalar index {k} out of range"),
        }
    }
}

/// A dense row-major `rows × width` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Table<R> {
    pub name: &'static str,
    pub role: RowRole,
    rows: usize,
    width: usize,
    data: Vec<R>,
}

impl<R: Real> Table<R> {
    pub fn zeros(spec: TableSpec, rows: usize, width: usize) -> Self {
        Self {
            name: spec.name,
            role: spec.role,
            rows,
            width,
            data: vec![R::default(); rows * width],
        }
    }

    pub(crate) fn from_data(spec: TableSpec, rows: usize, width: usize, data: Vec<R>) -> Self {
        debug_assert_eq!(data.len(), rows * width);
        Self {
            name: spec.name,
            role: spec.role,
            rows,
            width,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[R] {
        &self.data[r * self.width..(r + 1) * self.width]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [R] {
        &mut self.data[r * self.width..(r + 1) * self.width]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> R {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: R) {
        self.data[r * self.width + c] = v;
    }

    fn truncated(&self, width: usize) -> Self {
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[..width]);
        }
        Self {
            name: self.name,
            role: self.role,
            rows: self.rows,
            width,
            data,
        }
    }

    fn permuted(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(order.iter().map(|&c| row[c]));
        }
        Self {
            data,
            ..self.clone()
        }
    }
}

/// How tables are filled at construction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InitScheme {
    /// Uniform in `±1/sqrt(d_n)`; RotatE phases uniform in `[0, 2π)`.
    #[default]
    UniformScaled,
    /// Every entry set to the given value (phases included).
    Constant(f64),
}

/// One parameter store holding every sub-model of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct CroppableModel<R: Real = f32> {
    score_fn: ScoreFunction,
    schedule: DimensionSchedule,
    num_entities: usize,
    num_relations: usize,
    tables: Vec<Table<R>>,
    pub scalars: Scalars<R>,
}

impl<R: Real> CroppableModel<R> {
    pub fn zeros(
        score_fn: ScoreFunction,
        schedule: DimensionSchedule,
        num_entities: usize,
        num_relations: usize,
    ) -> Result<Self> {
        let layout = score_fn.kind.layout();
        let width = schedule.full_dim();
        let mut tables = Vec::with_capacity(layout.specs.len());
        for spec in layout.specs {
            let rows = layout.rows(spec.role, num_entities, num_relations);
            if rows == 0 {
                return Err(Error::EmptyTable(spec.name.to_owned()));
            }
            tables.push(Table::zeros(*spec, rows, width));
        }
        Ok(Self {
            score_fn,
            schedule,
            num_entities,
            num_relations,
            tables,
            scalars: Scalars::ones(),
        })
    }

    /// Construct and fill the tables; scalars start at 1.
    pub fn init<G: Rng + ?Sized>(
        score_fn: ScoreFunction,
        schedule: DimensionSchedule,
        num_entities: usize,
        num_relations: usize,
        scheme: InitScheme,
        rng: &mut G,
    ) -> Result<Self> {
        let mut model = Self::zeros(score_fn, schedule, num_entities, num_relations)?;
        let bound = 1.0 / (model.full_dim() as f64).sqrt();
        let uniform = Uniform::new(-bound, bound).expect("bound is finite and positive");
        let phase = Uniform::new(0.0, TAU).expect("valid phase range");
        for table in &mut model.tables {
            let dist = if table.name == "relation_phase" { &phase } else { &uniform };
            for v in table.data.iter_mut() {
                *v = match scheme {
                    InitScheme::UniformScaled => R::from_f64(dist.sample(rng)),
                    InitScheme::Constant(c) => R::from_f64(c),
                };
            }
        }
        Ok(model)
    }

    pub(crate) fn from_parts(
        score_fn: ScoreFunction,
        schedule: DimensionSchedule,
        num_entities: usize,
        num_relations: usize,
        tables: Vec<Table<R>>,
        scalars: Scalars<R>,
    ) -> Self {
        Self {
            score_fn,
            schedule,
            num_entities,
            num_relations,
            tables,
            scalars,
        }
    }

    pub fn score_fn(&self) -> ScoreFunction {
        self.score_fn
    }

    pub fn kind(&self) -> ScoreKind {
        self.score_fn.kind
    }

    pub fn schedule(&self) -> &DimensionSchedule {
        &self.schedule
    }

    pub fn num_sub_models(&self) -> usize {
        self.schedule.len()
    }

    pub fn full_dim(&self) -> usize {
        self.schedule.full_dim()
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn tables(&self) -> &[Table<R>] {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut [Table<R>] {
        &mut self.tables
    }

    pub fn table(&self, idx: usize) -> &Table<R> {
        &self.tables[idx]
    }

    pub fn table_by_name(&self, name: &str) -> Option<&Table<R>> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Embedding parameters of a sub-model of width `width` (scalars excluded).
    pub fn param_count(&self, width: usize) -> usize {
        self.tables.iter().map(|t| t.rows * width).sum()
    }

    /// Read-only view of sub-model `i` (1-based).
    pub fn prefix_view(&self, i: usize) -> Result<PrefixView<'_, R>> {
        let width = self.schedule.dim(i)?;
        Ok(PrefixView { model: self, width })
    }

    /// Writable view of sub-model `i`; writes land in the shared tables.
    pub fn prefix_view_mut(&mut self, i: usize) -> Result<PrefixViewMut<'_, R>> {
        let width = self.schedule.dim(i)?;
        Ok(PrefixViewMut { model: self, width })
    }

    /// Keep the first `dim` columns; `dim` must be a scheduled width.
    pub fn crop(&self, dim: usize) -> Result<Self> {
        self.schedule.index_of(dim)?;
        self.truncate(dim)
    }

    /// Keep the first `dim` columns for any `1 <= dim <= d_n`; the schedule
    /// keeps the widths below `dim` and ends at `dim`.
    pub fn truncate(&self, dim: usize) -> Result<Self> {
        if dim == 0 || dim > self.full_dim() {
            return Err(Error::InvalidSchedule(format!(
                "cannot truncate width {} to {dim}",
                self.full_dim()
            )));
        }
        Ok(Self {
            score_fn: self.score_fn,
            schedule: self.schedule.truncated(dim)?,
            num_entities: self.num_entities,
            num_relations: self.num_relations,
            tables: self.tables.iter().map(|t| t.truncated(dim)).collect(),
            scalars: self.scalars,
        })
    }

    /// Same parameters interpreted under a different schedule ending at `d_n`.
    pub fn with_schedule(&self, schedule: DimensionSchedule) -> Result<Self> {
        if schedule.full_dim() != self.full_dim() {
            return Err(Error::InvalidSchedule(format!(
                "schedule must end at the table width {}, got {}",
                self.full_dim(),
                schedule.full_dim()
            )));
        }
        Ok(Self {
            schedule,
            ..self.clone()
        })
    }

    /// Permute columns of every table so that importance is descending.
    /// Ties keep their original relative order.
    pub fn reorder_dimensions(&self, importance: &[f64]) -> Result<Self> {
        let order = descending_order(importance, self.full_dim())?;
        Ok(self.permute_columns(&order))
    }

    /// New column `c` takes old column `order[c]`.
    pub fn permute_columns(&self, order: &[usize]) -> Self {
        Self {
            tables: self.tables.iter().map(|t| t.permuted(order)).collect(),
            ..self.clone()
        }
    }

    /// Zero column `c` in every table.
    pub fn zero_column(&mut self, c: usize) {
        for t in &mut self.tables {
            for r in 0..t.rows {
                t.set(r, c, R::default());
            }
        }
    }

    /// Convert element type (for example to `f64` for gradient checks).
    pub fn cast<S: Real>(&self) -> CroppableModel<S> {
        CroppableModel {
            score_fn: self.score_fn,
            schedule: self.schedule.clone(),
            num_entities: self.num_entities,
            num_relations: self.num_relations,
            tables: self
                .tables
                .iter()
                .map(|t| Table {
                    name: t.name,
                    role: t.role,
                    rows: t.rows,
                    width: t.width,
                    data: t.data.iter().map(|v| S::from_f64(v.to_f64())).collect(),
                })
                .collect(),
            scalars: Scalars {
                w1: S::from_f64(self.scalars.w1.to_f64()),
                w2: S::from_f64(self.scalars.w2.to_f64()),
                w3: S::from_f64(self.scalars.w3.to_f64()),
            },
        }
    }

    /// Write `id<TAB>v1<TAB>…<TAB>vd` lines for the first `width` columns of a table.
    pub fn dump_table<W: Write>(&self, table: usize, width: usize, out: &mut W) -> std::io::Result<()> {
        let t = &self.tables[table];
        for r in 0..t.rows {
            write!(out, "{r}")?;
            for v in &t.row(r)[..width] {
                write!(out, "\t{}", v.to_f64())?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Column order sorting `importance` descending (stable).
pub fn descending_order(importance: &[f64], width: usize) -> Result<Vec<usize>> {
    if importance.len() != width {
        return Err(Error::ImportanceLength {
            expected: width,
            found: importance.len(),
        });
    }
    if let Some(c) = importance.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteImportance(c));
    }
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]));
    Ok(order)
}

/// Sub-model `M_i`: the first `width` columns of every table.
#[derive(Debug, Clone, Copy)]
pub struct PrefixView<'a, R: Real> {
    model: &'a CroppableModel<R>,
    width: usize,
}

impl<'a, R: Real> PrefixView<'a, R> {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn model(&self) -> &'a CroppableModel<R> {
        self.model
    }

    pub fn row(&self, table: usize, row: usize) -> &'a [R] {
        &self.model.tables[table].row(row)[..self.width]
    }
}

pub struct PrefixViewMut<'a, R: Real> {
    model: &'a mut CroppableModel<R>,
    width: usize,
}

impl<R: Real> PrefixViewMut<'_, R> {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, table: usize, row: usize) -> &[R] {
        &self.model.tables[table].row(row)[..self.width]
    }

    pub fn row_mut(&mut self, table: usize, row: usize) -> &mut [R] {
        let w = self.width;
        &mut self.model.tables[table].row_mut(row)[..w]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(kind: ScoreKind, dims: &[usize], seed: u64) -> CroppableModel {
        CroppableModel::init(
            kind.into(),
            DimensionSchedule::new(dims.to_vec()).unwrap(),
            7,
            3,
            InitScheme::UniformScaled,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    #[test]
    fn range_spec_gives_sixty_four_sub_models() {
        let s = DimensionSchedule::parse_spec("10:640:10").unwrap();
        assert_eq!(s.len(), 64);
        assert_eq!(s.dim(1).unwrap(), 10);
        assert_eq!(s.full_dim(), 640);
        assert_eq!(s.dim(7).unwrap(), 70);
    }

    #[test]
    fn range_spec_unaligned_stop_is_excluded() {
        let s = DimensionSchedule::parse_spec("10:65:10").unwrap();
        assert_eq!(s.dims(), &[10, 20, 30, 40, 50, 60]);
    }

    #[test]
    fn list_and_single_specs() {
        assert_eq!(DimensionSchedule::parse_spec("500").unwrap().dims(), &[500]);
        assert_eq!(
            DimensionSchedule::parse_spec("8, 16,32,64").unwrap().dims(),
            &[8, 16, 32, 64]
        );
        assert!(DimensionSchedule::parse_spec("8,8").is_err());
        assert!(DimensionSchedule::parse_spec("16,8").is_err());
        assert!(DimensionSchedule::parse_spec("0,8").is_err());
        assert!(DimensionSchedule::parse_spec("").is_err());
        assert!(DimensionSchedule::parse_spec("1:10:0").is_err());
        assert!(DimensionSchedule::parse_spec("1:10").is_err());
    }

    #[test]
    fn init_sets_scalars_and_bounds() {
        let m = model(ScoreKind::RotatE, &[4, 16], 1);
        assert_eq!(m.scalars, Scalars::ones());
        let bound = 1.0 / 4.0;
        for t in m.tables() {
            for &v in t.data() {
                if t.name == "relation_phase" {
                    assert!((0.0..TAU as f32).contains(&v));
                } else {
                    assert!(v.abs() <= bound);
                }
            }
        }
    }

    #[test]
    fn init_is_reproducible() {
        let a = model(ScoreKind::TransE, &[10, 20], 99);
        let b = model(ScoreKind::TransE, &[10, 20], 99);
        assert_eq!(a.table(0).row(0), b.table(0).row(0));
        let c = model(ScoreKind::TransE, &[10, 20], 100);
        assert_ne!(a.table(0).row(0), c.table(0).row(0));
    }

    #[test]
    fn init_rejects_empty_rows() {
        let err = CroppableModel::<f32>::zeros(
            ScoreKind::TransE.into(),
            DimensionSchedule::new(vec![4]).unwrap(),
            0,
            2,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyTable(_)));
    }

    #[test]
    fn prefix_views_nest_and_alias() {
        let mut m = model(ScoreKind::SimplE, &[10, 20, 40], 4);
        {
            let full = m.prefix_view(3).unwrap();
            assert_eq!(full.row(1, 2), m.table(1).row(2));
            let small = m.prefix_view(1).unwrap();
            assert_eq!(small.width(), 10);
            let mid = m.prefix_view(2).unwrap();
            assert_eq!(small.row(0, 5), &mid.row(0, 5)[..10]);
        }
        {
            let mut v = m.prefix_view_mut(1).unwrap();
            v.row_mut(2, 1)[3] = 12.5;
        }
        assert_eq!(m.table(2).get(1, 3), 12.5);
        assert!(m.prefix_view(0).is_err());
        assert!(m.prefix_view(4).is_err());
    }

    #[test]
    fn crop_rules() {
        let m = model(ScoreKind::PairRE, &[8, 16, 32], 2);
        assert_eq!(m.crop(32).unwrap(), m);
        let c = m.crop(16).unwrap();
        assert_eq!(c.schedule().dims(), &[8, 16]);
        assert_eq!(c.table(1).row(2), &m.table(1).row(2)[..16]);
        assert_eq!(c.scalars, m.scalars);
        match m.crop(12) {
            Err(Error::DimNotInSchedule { dim: 12, valid }) => assert_eq!(valid, vec![8, 16, 32]),
            other => panic!("unexpected {other:?}"),
        }
        let t = m.truncate(12).unwrap();
        assert_eq!(t.schedule().dims(), &[8, 12]);
    }

    #[test]
    fn reorder_sorts_descending() {
        assert_eq!(descending_order(&[1.0, 3.0, 2.0], 3).unwrap(), vec![1, 2, 0]);
        assert_eq!(descending_order(&[3.0, 2.0, 2.0, 1.0], 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(matches!(
            descending_order(&[1.0, 2.0], 3),
            Err(Error::ImportanceLength { expected: 3, found: 2 })
        ));
        assert!(matches!(
            descending_order(&[1.0, f64::NAN, 2.0], 3),
            Err(Error::NonFiniteImportance(1))
        ));
    }

    #[test]
    fn reorder_moves_rotate_columns_together() {
        let m = model(ScoreKind::RotatE, &[3], 8);
        let r = m.reorder_dimensions(&[1.0, 3.0, 2.0]).unwrap();
        for (ti, t) in m.tables().iter().enumerate() {
            for row in 0..t.rows() {
                let new = r.table(ti).row(row);
                let old = t.row(row);
                assert_eq!(new, &[old[1], old[2], old[0]]);
            }
        }
    }

    #[test]
    fn descending_importance_is_identity() {
        let m = model(ScoreKind::TransE, &[4], 3);
        assert_eq!(m.reorder_dimensions(&[4.0, 3.0, 2.0, 1.0]).unwrap(), m);
    }

    #[test]
    fn param_count_sums_tables() {
        let m = model(ScoreKind::SimplE, &[5, 10], 1);
        assert_eq!(m.param_count(5), (7 + 7 + 3 + 3) * 5);
    }

    #[test]
    fn dump_writes_one_line_per_row() {
        let m = model(ScoreKind::TransE, &[2, 4], 1);
        let mut buf = Vec::new();
        m.dump_table(0, 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[3].split('\t').count(), 3);
        assert!(lines[3].starts_with("3\t"));
    }
}
