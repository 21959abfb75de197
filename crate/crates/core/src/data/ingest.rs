use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed practice: a student answering a question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PracticeRecord {
    pub student_id: String,
    pub order_index: u64,
    pub question_id: String,
    pub answer: u8,
    pub concept_ids: Vec<String>,
    /// Dense question index in the [`QuestionCatalog`].
    pub question: usize,
    /// Dense concept indices, in the order listed.
    pub concepts: Vec<usize>,
}

/// A time-ordered window of one student's practice.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentSequence {
    pub student_id: String,
    /// Position of this window among the student's windows.
    pub window: usize,
    pub records: Vec<PracticeRecord>,
}

impl StudentSequence {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Ids in first-seen order; the position is the dense index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Catalog {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Catalog {
    fn from(ids: Vec<String>) -> Self {
        let index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { ids, index }
    }
}

impl From<Catalog> for Vec<String> {
    fn from(c: Catalog) -> Self {
        c.ids
    }
}

impl Catalog {
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), self.ids.len() - 1);
        self.ids.len() - 1
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Questions plus the concepts each one is tagged with.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionCatalog {
    pub questions: Catalog,
    /// Concept indices per question index.
    pub concepts: Vec<Vec<usize>>,
}

impl QuestionCatalog {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    /// True when every question carries exactly one concept.
    pub fn single_concept(&self) -> bool {
        self.concepts.iter().all(|c| c.len() == 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSchema {
    pub student: String,
    pub order: String,
    pub question: String,
    pub answer: String,
    pub concepts: String,
    pub concept_separator: char,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            student: "student_id".into(),
            order: "order_index".into(),
            question: "question_id".into(),
            answer: "answer".into(),
            concepts: "concept_ids".into(),
            concept_separator: ';',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowOptions {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for WindowOptions {
    fn default() -> Self {
        Self {
            min_len: 10,
            max_len: 200,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub sequences: Vec<StudentSequence>,
    pub concepts: Catalog,
    pub questions: QuestionCatalog,
}

impl Dataset {
    /// Student ids in first-seen order, one entry per student.
    pub fn student_ids(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.sequences
            .iter()
            .filter(|s| seen.insert(s.student_id.as_str()))
            .map(|s| s.student_id.clone())
            .collect()
    }

    pub fn records(&self) -> impl Iterator<Item = &PracticeRecord> {
        self.sequences.iter().flat_map(|s| &s.records)
    }
}

pub fn ingest_csv(path: &Path, schema: &CsvSchema, windows: WindowOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Data(format!("cannot open {}: {e}", path.display()))
    })?;
    ingest_reader(file, path, schema, windows)
}

/// Parses a practice log. `origin` only labels error messages.
pub fn ingest_reader<R: Read>(
    reader: R,
    origin: &Path,
    schema: &CsvSchema,
    windows: WindowOptions,
) -> Result<Dataset> {
    if windows.max_len == 0 || windows.min_len > windows.max_len {
        return Err(Error::InvalidArgument(format!(
            "window bounds min_len={} max_len={}",
            windows.min_len, windows.max_len
        )));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Data(format!("{}: missing required column `{name}`", origin.display()))
        })
    };
    let cols = [
        column(&schema.student)?,
        column(&schema.order)?,
        column(&schema.question)?,
        column(&schema.answer)?,
        column(&schema.concepts)?,
    ];

    let mut concepts = Catalog::default();
    let mut questions = QuestionCatalog::default();
    let mut students = Catalog::default();
    let mut per_student: Vec<Vec<(u64, PracticeRecord)>> = Vec::new();

    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Row {
            path: PathBuf::from(origin),
            line,
            message,
        };
        let field = |i: usize| row.get(cols[i]).unwrap_or("");

        let student_id = field(0);
        if student_id.is_empty() {
            return Err(bad("empty student id".into()));
        }
        let order_index: u64 = field(1)
            .parse()
            .map_err(|_| bad(format!("order index `{}` is not a non-negative integer", field(1))))?;
        let question_id = field(2);
        if question_id.is_empty() {
            return Err(bad("empty question id".into()));
        }
        let answer = match field(3) {
            "0" => 0u8,
            "1" => 1u8,
            other => return Err(bad(format!("answer `{other}` is not 0 or 1"))),
        };
        let mut concept_ids: Vec<String> = Vec::new();
        for c in field(4).split(schema.concept_separator).map(str::trim) {
            if !c.is_empty() && !concept_ids.iter().any(|x| x == c) {
                concept_ids.push(c.to_string());
            }
        }
        if concept_ids.is_empty() {
            return Err(bad("empty concept field".into()));
        }

        let concept_idx: Vec<usize> = concept_ids.iter().map(|c| concepts.intern(c)).collect();
        let q = questions.questions.intern(question_id);
        if q == questions.concepts.len() {
            questions.concepts.push(concept_idx.clone());
        } else {
            let mut known = questions.concepts[q].clone();
            let mut now = concept_idx.clone();
            known.sort_unstable();
            now.sort_unstable();
            if known != now {
                return Err(bad(format!(
                    "question `{question_id}` tagged with different concepts than on an earlier row"
                )));
            }
        }

        let s = students.intern(student_id);
        if s == per_student.len() {
            per_student.push(Vec::new());
        }
        per_student[s].push((
            line,
            PracticeRecord {
                student_id: student_id.to_string(),
                order_index,
                question_id: question_id.to_string(),
                answer,
                concept_ids,
                question: q,
                concepts: concept_idx,
            },
        ));
    }

    let mut sequences = Vec::new();
    for mut records in per_student {
        records.sort_by_key(|(_, r)| r.order_index);
        for pair in records.windows(2) {
            if pair[0].1.order_index == pair[1].1.order_index {
                return Err(Error::Row {
                    path: PathBuf::from(origin),
                    line: pair[1].0,
                    message: format!(
                        "duplicate order index {} for student `{}`",
                        pair[1].1.order_index, pair[1].1.student_id
                    ),
                });
            }
        }
        let records: Vec<PracticeRecord> = records.into_iter().map(|(_, r)| r).collect();
        if records.len() < windows.min_len {
            continue;
        }
        for (w, chunk) in records.chunks(windows.max_len).enumerate() {
            if chunk.len() >= windows.min_len {
                sequences.push(StudentSequence {
                    student_id: chunk[0].student_id.clone(),
                    window: w,
                    records: chunk.to_vec(),
                });
            }
        }
    }

    Ok(Dataset {
        sequences,
        concepts,
        questions,
    })
}
