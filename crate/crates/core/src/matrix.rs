//! The NLI pair matrix: one probability triple per (document block,
//! summary block) pair, plus an on-disk cache keyed by content hash.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nli::{BackendId, NliBackend, NliProbs};
use crate::segmenter::{split_blocks, BlockList, Granularity, Side, ABBREVIATIONS_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    E,
    N,
    C,
}

impl Category {
    pub fn pick(self, p: &NliProbs) -> f64 {
        match self {
            Category::E => p.e,
            Category::N => p.n,
            Category::C => p.c,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::E => "E",
            Category::N => "N",
            Category::C => "C",
        })
    }
}

/// Which NLI categories an aggregator consumes. Views are always ordered E, N, C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Category>", into = "Vec<Category>")]
pub struct CategorySet {
    include_e: bool,
    include_n: bool,
    include_c: bool,
}

impl Default for CategorySet {
    fn default() -> Self {
        CategorySet::ENTAILMENT
    }
}

impl CategorySet {
    pub const ENTAILMENT: CategorySet = CategorySet {
        include_e: true,
        include_n: false,
        include_c: false,
    };
    pub const ALL: CategorySet = CategorySet {
        include_e: true,
        include_n: true,
        include_c: true,
    };

    pub fn new(include_e: bool, include_n: bool, include_c: bool) -> Result<Self> {
        if !(include_e || include_n || include_c) {
            return Err(Error::Config("at least one NLI category must be included".into()));
        }
        Ok(CategorySet {
            include_e,
            include_n,
            include_c,
        })
    }

    pub fn contains(&self, cat: Category) -> bool {
        match cat {
            Category::E => self.include_e,
            Category::N => self.include_n,
            Category::C => self.include_c,
        }
    }

    /// Included categories in canonical order E, N, C.
    pub fn categories(&self) -> Vec<Category> {
        [Category::E, Category::N, Category::C]
            .into_iter()
            .filter(|c| self.contains(*c))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.categories().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<Vec<Category>> for CategorySet {
    type Error = Error;

    fn try_from(cats: Vec<Category>) -> Result<Self> {
        CategorySet::new(
            cats.contains(&Category::E),
            cats.contains(&Category::N),
            cats.contains(&Category::C),
        )
    }
}

impl From<CategorySet> for Vec<Category> {
    fn from(set: CategorySet) -> Self {
        set.categories()
    }
}

impl FromStr for CategorySet {
    type Err = Error;

    /// Parses strings such as `"e"`, `"E,C"` or `"enc"`.
    fn from_str(s: &str) -> Result<Self> {
        let mut cats = Vec::new();
        for ch in s.chars().filter(|c| !matches!(c, ',' | ' ' | '+')) {
            cats.push(match ch.to_ascii_uppercase() {
                'E' => Category::E,
                'N' => Category::N,
                'C' => Category::C,
                other => return Err(Error::Config(format!("unknown NLI category {other:?}"))),
            });
        }
        CategorySet::try_from(cats)
    }
}

impl fmt::Display for CategorySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.categories() {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// M x N grid of NLI probabilities; rows are document blocks, columns summary blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatrix {
    cells: Vec<Vec<NliProbs>>,
    n: usize,
    doc_granularity: Granularity,
    sum_granularity: Granularity,
    backend: BackendId,
}

impl PairMatrix {
    pub fn from_cells(
        cells: Vec<Vec<NliProbs>>,
        doc_granularity: Granularity,
        sum_granularity: Granularity,
        backend: BackendId,
    ) -> Result<Self> {
        let m = cells.len();
        let n = cells.first().map_or(0, Vec::len);
        if m == 0 || n == 0 {
            return Err(Error::DimensionZero(format!("{m}x{n} pair matrix")));
        }
        if cells.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionZero("ragged pair matrix rows".into()));
        }
        for cell in cells.iter().flatten() {
            cell.validate()?;
        }
        Ok(PairMatrix {
            cells,
            n,
            doc_granularity,
            sum_granularity,
            backend,
        })
    }

    /// Builds a matrix from entailment scores only, splitting the remaining
    /// mass as 10% contradiction / 90% neutral.
    pub fn from_entailment(grid: &[Vec<f64>], backend: BackendId) -> Result<Self> {
        let cells = grid
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&e| NliProbs::new(e, 0.1 * (1.0 - e), 0.9 * (1.0 - e)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        PairMatrix::from_cells(cells, Granularity::Sentence, Granularity::Sentence, backend)
    }

    pub fn m(&self) -> usize {
        self.cells.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cell(&self, row: usize, col: usize) -> &NliProbs {
        &self.cells[row][col]
    }

    pub fn rows(&self) -> &[Vec<NliProbs>] {
        &self.cells
    }

    pub fn column(&self, col: usize, cat: Category) -> Vec<f64> {
        self.cells.iter().map(|row| cat.pick(&row[col])).collect()
    }

    pub fn doc_granularity(&self) -> Granularity {
        self.doc_granularity
    }

    pub fn sum_granularity(&self) -> Granularity {
        self.sum_granularity
    }

    pub fn backend(&self) -> &BackendId {
        &self.backend
    }

    /// Keeps only the summary columns at `cols`, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<PairMatrix> {
        let cells = self
            .cells
            .iter()
            .map(|row| cols.iter().map(|&j| row[j]).collect())
            .collect();
        PairMatrix::from_cells(
            cells,
            self.doc_granularity,
            self.sum_granularity,
            self.backend.clone(),
        )
    }

    /// Keeps only the document rows at `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<PairMatrix> {
        let cells = rows.iter().map(|&i| self.cells[i].clone()).collect();
        PairMatrix::from_cells(
            cells,
            self.doc_granularity,
            self.sum_granularity,
            self.backend.clone(),
        )
    }
}

/// Scores every (document block, summary block) pair with `backend`.
pub fn build_pair_matrix(
    doc: &BlockList,
    summary: &BlockList,
    backend: &dyn NliBackend,
) -> Result<PairMatrix> {
    if doc.side() != Side::Document || summary.side() != Side::Summary {
        return Err(Error::Config(
            "pair matrix needs a document-side and a summary-side block list".into(),
        ));
    }
    let (m, n) = (doc.len(), summary.len());
    if m == 0 || n == 0 {
        return Err(Error::DimensionZero(format!("{m}x{n} pair matrix")));
    }
    let pairs: Vec<(&str, &str)> = doc
        .blocks()
        .iter()
        .flat_map(|d| summary.blocks().iter().map(move |s| (d.as_str(), s.as_str())))
        .collect();
    let probs = backend.score_pairs(&pairs)?;
    if probs.len() != pairs.len() {
        return Err(Error::BackendUnavailable(format!(
            "backend returned {} results for {} pairs",
            probs.len(),
            pairs.len()
        )));
    }
    let cells = probs.chunks(n).map(<[NliProbs]>::to_vec).collect();
    PairMatrix::from_cells(
        cells,
        doc.granularity(),
        summary.granularity(),
        backend.id().clone(),
    )
}

/// Projects the matrix onto each included category, in order E, N, C.
pub fn select_category_view(mat: &PairMatrix, cats: CategorySet) -> Vec<Vec<Vec<f64>>> {
    cats.categories()
        .into_iter()
        .map(|cat| {
            mat.rows()
                .iter()
                .map(|row| row.iter().map(|p| cat.pick(p)).collect())
                .collect()
        })
        .collect()
}

/// Stable content hash of everything that determines a pair matrix.
pub fn cache_key(
    doc_text: &str,
    summary_text: &str,
    doc_granularity: Granularity,
    sum_granularity: Granularity,
    backend: &BackendId,
) -> String {
    let mut hasher = Sha256::new();
    let fields = [
        "pair-matrix/v1",
        &ABBREVIATIONS_VERSION.to_string(),
        doc_text,
        summary_text,
        doc_granularity.as_str(),
        sum_granularity.as_str(),
        &backend.name,
        &backend.version,
    ];
    for field in fields {
        // length prefix keeps field boundaries unambiguous
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Serialized form of a cached matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheFile {
    pub key: String,
    pub m: usize,
    pub n: usize,
    pub doc_granularity: Granularity,
    pub sum_granularity: Granularity,
    pub backend: BackendId,
    pub cells: Vec<Vec<[f64; 3]>>,
}

impl CacheFile {
    pub fn from_matrix(key: &str, mat: &PairMatrix) -> Self {
        CacheFile {
            key: key.to_string(),
            m: mat.m(),
            n: mat.n(),
            doc_granularity: mat.doc_granularity(),
            sum_granularity: mat.sum_granularity(),
            backend: mat.backend().clone(),
            cells: mat
                .rows()
                .iter()
                .map(|row| row.iter().map(NliProbs::as_array).collect())
                .collect(),
        }
    }

    pub fn into_matrix(self) -> Result<PairMatrix> {
        let cells = self
            .cells
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|[e, c, n]| NliProbs::new(e, c, n))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mat = PairMatrix::from_cells(
            cells,
            self.doc_granularity,
            self.sum_granularity,
            self.backend,
        )?;
        if mat.m() != self.m || mat.n() != self.n {
            return Err(Error::Config(format!(
                "cache entry {} declares {}x{} but holds {}x{}",
                self.key,
                self.m,
                self.n,
                mat.m(),
                mat.n()
            )));
        }
        Ok(mat)
    }
}

/// Directory of `<key>.json` matrix files. Writes go through a temporary
/// file and an atomic rename, so readers never see partial entries.
#[derive(Debug, Clone)]
pub struct MatrixCache {
    dir: PathBuf,
}

impl MatrixCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(MatrixCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<PairMatrix>> {
        let path = self.path(key);
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let file: CacheFile = serde_json::from_str(&raw)?;
        file.into_matrix().map(Some)
    }

    pub fn put(&self, key: &str, mat: &PairMatrix) -> Result<()> {
        let path = self.path(key);
        let raw = serde_json::to_vec(&CacheFile::from_matrix(key, mat))?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        tmp.write_all(&raw).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }
}

/// Fixture entries reproducing `mat` for the given block lists.
pub fn fixture_from_matrix(
    doc: &BlockList,
    summary: &BlockList,
    mat: &PairMatrix,
) -> Result<crate::nli::FixtureFile> {
    if doc.len() != mat.m() || summary.len() != mat.n() {
        return Err(Error::DimensionZero(format!(
            "{}x{} blocks for a {}x{} matrix",
            doc.len(),
            summary.len(),
            mat.m(),
            mat.n()
        )));
    }
    let mut fixture = crate::nli::FixtureFile {
        backend: mat.backend().clone(),
        entries: Vec::with_capacity(mat.m() * mat.n()),
    };
    for (i, d) in doc.blocks().iter().enumerate() {
        for (j, s) in summary.blocks().iter().enumerate() {
            fixture.push(d, s, *mat.cell(i, j));
        }
    }
    Ok(fixture)
}

/// Segments both texts and builds their pair matrix, going through `cache` when given.
pub fn matrix_for_texts(
    doc_text: &str,
    summary_text: &str,
    doc_granularity: Granularity,
    sum_granularity: Granularity,
    backend: &dyn NliBackend,
    cache: Option<&MatrixCache>,
) -> Result<PairMatrix> {
    let key = cache.map(|_| {
        cache_key(
            doc_text,
            summary_text,
            doc_granularity,
            sum_granularity,
            backend.id(),
        )
    });
    if let (Some(cache), Some(key)) = (cache, key.as_deref()) {
        if let Some(mat) = cache.get(key)? {
            return Ok(mat);
        }
    }
    let doc = split_blocks(doc_text, doc_granularity, Side::Document)?;
    let summary = split_blocks(summary_text, sum_granularity, Side::Summary)?;
    let mat = build_pair_matrix(&doc, &summary, backend)?;
    if let (Some(cache), Some(key)) = (cache, key.as_deref()) {
        cache.put(key, &mat)?;
    }
    Ok(mat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nli::MockBackend;
    use crate::segmenter::split_blocks;

    fn mock_id() -> BackendId {
        MockBackend::new().id().clone()
    }

    #[test]
    fn single_block_sides_give_one_cell() {
        let doc = split_blocks("One. Two.", Granularity::Full, Side::Document).unwrap();
        let sum = split_blocks("Two.", Granularity::Full, Side::Summary).unwrap();
        let mat = build_pair_matrix(&doc, &sum, &MockBackend::new()).unwrap();
        assert_eq!((mat.m(), mat.n()), (1, 1));
    }

    #[test]
    fn mock_diagonal_is_one_for_identical_texts() {
        let text = "Alpha beta gamma. Delta epsilon zeta. Eta theta iota.";
        let doc = split_blocks(text, Granularity::Sentence, Side::Document).unwrap();
        let sum = split_blocks(text, Granularity::Sentence, Side::Summary).unwrap();
        let mat = build_pair_matrix(&doc, &sum, &MockBackend::new()).unwrap();
        assert_eq!((mat.m(), mat.n()), (3, 3));
        for i in 0..3 {
            assert_eq!(mat.cell(i, i).e, 1.0);
        }
        assert_eq!(mat.cell(0, 1).e, 0.0);
    }

    #[test]
    fn rejects_swapped_sides_and_empty_grids() {
        let doc = split_blocks("A.", Granularity::Full, Side::Document).unwrap();
        assert!(build_pair_matrix(&doc, &doc, &MockBackend::new()).is_err());
        assert!(matches!(
            PairMatrix::from_entailment(&[], mock_id()),
            Err(Error::DimensionZero(_))
        ));
    }

    #[test]
    fn category_view_projection() {
        let cell = NliProbs::new(0.7, 0.2, 0.1).unwrap();
        let mat = PairMatrix::from_cells(
            vec![vec![cell]],
            Granularity::Sentence,
            Granularity::Sentence,
            mock_id(),
        )
        .unwrap();
        let ec = CategorySet::new(true, false, true).unwrap();
        assert_eq!(select_category_view(&mat, ec), vec![vec![vec![0.7]], vec![vec![0.2]]]);
        let all = select_category_view(&mat, CategorySet::ALL);
        assert_eq!(all.len(), 3);
        assert_eq!(all[1][0][0], 0.1); // N comes before C
    }

    #[test]
    fn category_set_parsing() {
        assert_eq!("E".parse::<CategorySet>().unwrap(), CategorySet::ENTAILMENT);
        assert_eq!("e,n,c".parse::<CategorySet>().unwrap(), CategorySet::ALL);
        assert!("".parse::<CategorySet>().is_err());
        assert!("x".parse::<CategorySet>().is_err());
        assert!(CategorySet::new(false, false, false).is_err());
        let json = serde_json::to_string(&CategorySet::ALL).unwrap();
        assert_eq!(json, r#"["E","N","C"]"#);
    }

    #[test]
    fn cache_key_sensitivity() {
        let a = BackendId::new("m", "1").unwrap();
        let b = BackendId::new("m", "2").unwrap();
        let g = Granularity::Sentence;
        assert_eq!(cache_key("d", "s", g, g, &a), cache_key("d", "s", g, g, &a));
        assert_ne!(cache_key("d", "s", g, g, &a), cache_key("d", "s", g, g, &b));
        assert_ne!(
            cache_key("d", "s", g, g, &a),
            cache_key("d", "s", Granularity::Full, g, &a)
        );
        // field boundaries
        assert_ne!(cache_key("ab", "c", g, g, &a), cache_key("a", "bc", g, g, &a));
    }

    #[test]
    fn cache_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let cache = MatrixCache::open(dir.path()).unwrap();
        let backend = MockBackend::new();
        let doc = "The quick brown fox jumps. It lands in 3.7 seconds. Nobody saw it.";
        let sum = "A fox jumps quickly. Somebody watched.";
        let g = (Granularity::Sentence, Granularity::Sentence);
        let fresh = matrix_for_texts(doc, sum, g.0, g.1, &backend, None).unwrap();
        let first = matrix_for_texts(doc, sum, g.0, g.1, &backend, Some(&cache)).unwrap();
        let cached = matrix_for_texts(doc, sum, g.0, g.1, &backend, Some(&cache)).unwrap();
        assert_eq!(fresh, first);
        assert_eq!(fresh, cached);
        let key = cache_key(doc, sum, g.0, g.1, backend.id());
        assert!(cache.dir().join(format!("{key}.json")).exists());
    }
}
