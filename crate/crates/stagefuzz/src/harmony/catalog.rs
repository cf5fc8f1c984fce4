// SPDX-License-Identifier: Apache-2.0

//! Operator-template constraint catalog, merged from multiple knowledge
//! sources. Entries agreeing across at least two sources are marked
//! verified; sources that disagree mark the entry disputed, and disputed
//! entries are never used for generation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use stagefuzz_core::tensor::DType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Template {
    Elementwise,
    Reduction,
    Matmul,
    Conv,
    Stencil,
}

impl Template {
    pub const ALL: [Template; 5] = [
        Template::Elementwise,
        Template::Reduction,
        Template::Matmul,
        Template::Conv,
        Template::Stencil,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::Elementwise => "elementwise",
            Template::Reduction => "reduction",
            Template::Matmul => "matmul",
            Template::Conv => "conv",
            Template::Stencil => "stencil",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Template::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown template `{s}`"))
    }
}

/// Annotation families a generated loop may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AnnFamily {
    Parallel,
    Vectorize,
    Unroll,
    Pipelined,
}

impl AnnFamily {
    pub fn name(self) -> &'static str {
        match self {
            AnnFamily::Parallel => "parallel",
            AnnFamily::Vectorize => "vectorize",
            AnnFamily::Unroll => "unroll",
            AnnFamily::Pipelined => "pipelined",
        }
    }
}

impl FromStr for AnnFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parallel" => Ok(AnnFamily::Parallel),
            "vectorize" => Ok(AnnFamily::Vectorize),
            "unroll" => Ok(AnnFamily::Unroll),
            "pipelined" => Ok(AnnFamily::Pipelined),
            other => Err(format!("unknown annotation family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SourceTag {
    Builtin,
    Docs,
    Provider,
}

impl SourceTag {
    pub fn name(self) -> &'static str {
        match self {
            SourceTag::Builtin => "builtin",
            SourceTag::Docs => "docs",
            SourceTag::Provider => "provider",
        }
    }
}

/// One template's legal ranges: extent bounds, dtype set, and which
/// annotation families may attach at which loop depth.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryConstraints {
    pub extent_min: usize,
    pub extent_max: usize,
    pub dtypes: BTreeSet<DType>,
    pub annotations: BTreeMap<usize, BTreeSet<AnnFamily>>,
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub template: Template,
    pub constraints: EntryConstraints,
    pub sources: BTreeSet<SourceTag>,
    pub verified: bool,
    pub disputed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ConstraintCatalog {
    pub entries: BTreeMap<Template, CatalogEntry>,
}

impl ConstraintCatalog {
    /// Templates usable for generation: present and not disputed.
    pub fn usable(&self, template: Template) -> Option<&CatalogEntry> {
        self.entries
            .get(&template)
            .filter(|e| !e.disputed)
    }

    pub fn verified_count(&self) -> usize {
        self.entries.values().filter(|e| e.verified).count()
    }

    pub fn disputed_count(&self) -> usize {
        self.entries.values().filter(|e| e.disputed).count()
    }
}

fn anns(entries: &[(usize, &[AnnFamily])]) -> BTreeMap<usize, BTreeSet<AnnFamily>> {
    entries
        .iter()
        .map(|(d, fams)| (*d, fams.iter().copied().collect()))
        .collect()
}

/// The built-in constraint source, always present.
pub fn builtin_constraints() -> Vec<(Template, EntryConstraints)> {
    use AnnFamily::*;
    vec![
        (
            Template::Elementwise,
            EntryConstraints {
                extent_min: 5,
                extent_max: 40,
                dtypes: [DType::F32, DType::I32].into_iter().collect(),
                annotations: anns(&[(0, &[Parallel, Vectorize, Unroll, Pipelined])]),
            },
        ),
        (
            Template::Reduction,
            EntryConstraints {
                extent_min: 6,
                extent_max: 40,
                dtypes: [DType::F32, DType::I32].into_iter().collect(),
                annotations: anns(&[(0, &[Unroll])]),
            },
        ),
        (
            Template::Matmul,
            EntryConstraints {
                extent_min: 4,
                extent_max: 12,
                dtypes: [DType::F32, DType::I32].into_iter().collect(),
                annotations: anns(&[(0, &[Parallel, Pipelined]), (1, &[Unroll]), (2, &[Vectorize, Unroll])]),
            },
        ),
        (
            Template::Conv,
            EntryConstraints {
                extent_min: 5,
                extent_max: 12,
                dtypes: [DType::F32].into_iter().collect(),
                annotations: anns(&[(0, &[Parallel]), (1, &[Unroll])]),
            },
        ),
        (
            Template::Stencil,
            EntryConstraints {
                extent_min: 8,
                extent_max: 33,
                dtypes: [DType::F32, DType::I32].into_iter().collect(),
                annotations: anns(&[(0, &[Vectorize, Unroll, Pipelined])]),
            },
        ),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocParseError {
    pub file: String,
    pub message: String,
}

/// Parses a template-constraint doc: YAML-ish front matter between `---`
/// fences with keys `template`, `extent-min`, `extent-max`, `dtypes`,
/// `annotations` (for example `0:vectorize,unroll 1:unroll`).
pub fn parse_template_doc(
    file: &str,
    text: &str,
) -> Result<(Template, EntryConstraints), DocParseError> {
    let fields = super::front_matter(text).ok_or_else(|| DocParseError {
        file: file.to_string(),
        message: "missing front-matter fences".into(),
    })?;
    let get = |key: &str| -> Result<&str, DocParseError> {
        fields
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| DocParseError {
                file: file.to_string(),
                message: format!("missing `{key}` field"),
            })
    };
    let template = Template::from_str(get("template")?).map_err(|m| DocParseError {
        file: file.to_string(),
        message: m,
    })?;
    let parse_num = |key: &str| -> Result<usize, DocParseError> {
        get(key)?.trim().parse().map_err(|_| DocParseError {
            file: file.to_string(),
            message: format!("bad `{key}` value"),
        })
    };
    let extent_min = parse_num("extent-min")?;
    let extent_max = parse_num("extent-max")?;
    let mut dtypes = BTreeSet::new();
    for d in get("dtypes")?.split_whitespace() {
        dtypes.insert(DType::from_str(d).map_err(|m| DocParseError {
            file: file.to_string(),
            message: m,
        })?);
    }
    let mut annotations: BTreeMap<usize, BTreeSet<AnnFamily>> = BTreeMap::new();
    for group in get("annotations")?.split_whitespace() {
        let (depth, fams) = group.split_once(':').ok_or_else(|| DocParseError {
            file: file.to_string(),
            message: format!("bad annotation group `{group}`"),
        })?;
        let depth: usize = depth.parse().map_err(|_| DocParseError {
            file: file.to_string(),
            message: format!("bad annotation depth `{depth}`"),
        })?;
        let mut set = BTreeSet::new();
        for f in fams.split(',') {
            if f == "none" {
                continue;
            }
            set.insert(AnnFamily::from_str(f).map_err(|m| DocParseError {
                file: file.to_string(),
                message: m,
            })?);
        }
        annotations.insert(depth, set);
    }
    Ok((
        template,
        EntryConstraints {
            extent_min,
            extent_max,
            dtypes,
            annotations,
        },
    ))
}

/// Merges builtin constraints with the docs directory (and an optional
/// provider-cache JSON file of the same shape). Agreement across sources
/// verifies an entry; disagreement disputes and excludes it.
pub fn load_catalog(
    templates_dir: Option<&Path>,
    provider_cache: Option<&Path>,
) -> (ConstraintCatalog, Vec<DocParseError>) {
    let mut per_template: BTreeMap<Template, Vec<(SourceTag, EntryConstraints)>> = BTreeMap::new();
    for (t, c) in builtin_constraints() {
        per_template.entry(t).or_default().push((SourceTag::Builtin, c));
    }
    let mut errors = Vec::new();

    if let Some(dir) = templates_dir {
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map(|rd| {
                rd.filter_map(|e| e.ok())
                    .map(|e| e.path())
                    .filter(|p| p.extension().is_some_and(|e| e == "md"))
                    .collect::<Vec<_>>()
            })
            .unwrap_or_default();
        files.sort();
        for path in files {
            let display = path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default();
            match std::fs::read_to_string(&path) {
                Ok(text) => match parse_template_doc(&display, &text) {
                    Ok((t, c)) => per_template.entry(t).or_default().push((SourceTag::Docs, c)),
                    Err(e) => errors.push(e),
                },
                Err(e) => errors.push(DocParseError {
                    file: display,
                    message: format!("unreadable: {e}"),
                }),
            }
        }
    }

    if let Some(path) = provider_cache {
        if let Ok(text) = std::fs::read_to_string(path) {
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match parse_template_doc(&format!("provider-cache:{}", i + 1), line) {
                    Ok((t, c)) => per_template
                        .entry(t)
                        .or_default()
                        .push((SourceTag::Provider, c)),
                    Err(_) => {
                        // Provider cache lines use the doc front-matter
                        // form inline; anything else is ignored here and
                        // surfaced by the seed-path incident log instead.
                    }
                }
            }
        }
    }

    let mut catalog = ConstraintCatalog::default();
    for (template, sources) in per_template {
        let first = &sources[0].1;
        let all_agree = sources.iter().all(|(_, c)| c == first);
        let tags: BTreeSet<SourceTag> = sources.iter().map(|(t, _)| *t).collect();
        catalog.entries.insert(
            template,
            CatalogEntry {
                template,
                constraints: first.clone(),
                verified: all_agree && tags.len() >= 2,
                disputed: !all_agree,
                sources: tags,
            },
        );
    }
    (catalog, errors)
}
