//! Tolerant parsing of provider responses. Responses are fenced blocks with
//! one-line headers (`FILE validator.py`, `CASE invalid`, `SCENARIO WA`,
//! ...); prose around the blocks is ignored and malformed items are dropped
//! with a reason.

use crate::domain::{GenStrategy, Language};

const HEADERS: [&str; 9] = [
    "FILE ",
    "CASE ",
    "SCENARIO ",
    "GENERATOR ",
    "MUTANT ",
    "STATEMENT",
    "RATING ",
    "TIME_LIMIT_MS ",
    "MEMORY_LIMIT_MIB ",
];

fn is_header(line: &str) -> bool {
    HEADERS
        .iter()
        .any(|h| line.starts_with(h) || line.trim_end() == h.trim_end())
}

/// Split raw response text into top-level blocks. A block starts at a header
/// line outside any code fence and runs until the next header.
pub fn split_blocks(raw: &str) -> Vec<String> {
    let mut blocks: Vec<Vec<&str>> = Vec::new();
    let mut in_fence = false;
    for line in raw.lines() {
        if line.trim_end().starts_with("```") {
            if !in_fence && blocks.is_empty() {
                continue; // fenced prose before the first header
            }
            in_fence = !in_fence;
            if let Some(cur) = blocks.last_mut() {
                cur.push(line);
            }
            continue;
        }
        if !in_fence && is_header(line) {
            blocks.push(vec![line]);
            continue;
        }
        if let Some(cur) = blocks.last_mut() {
            cur.push(line);
        }
    }
    blocks
        .into_iter()
        .map(|lines| {
            let mut s = lines.join("\n");
            s.push('\n');
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedBatch<T> {
    pub records: Vec<T>,
    /// One human-readable reason per dropped item.
    pub drops: Vec<String>,
}

impl<T> ParsedBatch<T> {
    fn new() -> Self {
        ParsedBatch {
            records: Vec::new(),
            drops: Vec::new(),
        }
    }
}

struct BlockLines<'a> {
    header: &'a str,
    rest: Vec<&'a str>,
}

fn block_lines(item: &str) -> Option<BlockLines<'_>> {
    let mut lines = item.lines();
    let header = lines.next()?;
    Some(BlockLines {
        header,
        rest: lines.collect(),
    })
}

/// Extract the contents of the fence that starts at or after `from`.
/// Returns (content bytes, index just past the closing fence).
fn fenced_content(lines: &[&str], from: usize) -> Option<(Vec<u8>, usize)> {
    let mut i = from;
    while i < lines.len() && !lines[i].trim_end().starts_with("```") {
        if !lines[i].trim().is_empty() {
            return None; // unexpected prose where a fence should open
        }
        i += 1;
    }
    if i >= lines.len() {
        return None;
    }
    let mut content: Vec<u8> = Vec::new();
    let mut j = i + 1;
    while j < lines.len() {
        if lines[j].trim_end().starts_with("```") {
            return Some((content, j + 1));
        }
        content.extend_from_slice(lines[j].as_bytes());
        content.push(b'\n');
        j += 1;
    }
    None // unterminated fence
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceFile {
    pub name: String,
    pub language: Language,
    pub source: String,
}

fn parse_file_at(lines: &[&str], header_idx: usize) -> Result<(SourceFile, usize), String> {
    let header = lines[header_idx];
    let name = header
        .strip_prefix("FILE ")
        .ok_or_else(|| format!("expected FILE header, got {header:?}"))?
        .trim()
        .to_string();
    let ext = name.rsplit('.').next().unwrap_or_default();
    let language = Language::from_extension(ext)
        .ok_or_else(|| format!("file {name:?}: unsupported extension"))?;
    let (content, next) = fenced_content(lines, header_idx + 1)
        .ok_or_else(|| format!("file {name:?}: missing fenced source"))?;
    let source = String::from_utf8_lossy(&content).into_owned();
    if source.trim().is_empty() {
        return Err(format!("file {name:?}: empty source"));
    }
    Ok((
        SourceFile {
            name,
            language,
            source,
        },
        next,
    ))
}

/// `FILE <name>` blocks carrying program sources.
pub fn parse_source_files(items: &[String]) -> ParsedBatch<SourceFile> {
    let mut out = ParsedBatch::new();
    for item in items {
        let Some(block) = block_lines(item) else {
            out.drops.push("empty item".into());
            continue;
        };
        if !block.header.starts_with("FILE ") {
            out.drops
                .push(format!("expected FILE block, got {:?}", block.header));
            continue;
        }
        let all: Vec<&str> = std::iter::once(block.header).chain(block.rest).collect();
        match parse_file_at(&all, 0) {
            Ok((file, _)) => out.records.push(file),
            Err(reason) => out.drops.push(reason),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedEvalCase {
    pub input: Vec<u8>,
    pub valid: bool,
    pub note: String,
}

/// `CASE valid|invalid` blocks with an optional NOTE line and a fenced input.
pub fn parse_eval_cases(items: &[String]) -> ParsedBatch<ParsedEvalCase> {
    let mut out = ParsedBatch::new();
    for item in items {
        let Some(block) = block_lines(item) else {
            out.drops.push("empty item".into());
            continue;
        };
        let label = block.header.strip_prefix("CASE ").map(str::trim);
        let valid = match label {
            Some("valid") => true,
            Some("invalid") => false,
            _ => {
                out.drops
                    .push(format!("unrecognized case header {:?}", block.header));
                continue;
            }
        };
        let mut rest = block.rest;
        let mut note = String::new();
        if let Some(first) = rest.first() {
            if let Some(n) = first.strip_prefix("NOTE ") {
                note = n.trim().to_string();
                rest.remove(0);
            }
        }
        match fenced_content(&rest, 0) {
            Some((input, _)) => out.records.push(ParsedEvalCase { input, valid, note }),
            None => out
                .drops
                .push(format!("case {label:?}: missing fenced input")),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScenario {
    pub input: Vec<u8>,
    pub contestant_out: Vec<u8>,
    pub ref_out: Vec<u8>,
    pub expect_accept: bool,
}

/// `SCENARIO AC|WA` blocks with INPUT / CONTESTANT / REFERENCE sections.
pub fn parse_checker_scenarios(items: &[String]) -> ParsedBatch<ParsedScenario> {
    let mut out = ParsedBatch::new();
    for item in items {
        let Some(block) = block_lines(item) else {
            out.drops.push("empty item".into());
            continue;
        };
        let expect_accept = match block.header.strip_prefix("SCENARIO ").map(str::trim) {
            Some("AC") => true,
            Some("WA") => false,
            _ => {
                out.drops
                    .push(format!("unrecognized scenario header {:?}", block.header));
                continue;
            }
        };
        match parse_scenario_sections(&block.rest) {
            Ok((input, contestant_out, ref_out)) => out.records.push(ParsedScenario {
                input,
                contestant_out,
                ref_out,
                expect_accept,
            }),
            Err(reason) => out.drops.push(reason),
        }
    }
    out
}

fn parse_scenario_sections(lines: &[&str]) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>), String> {
    let mut sections: [Option<Vec<u8>>; 3] = [None, None, None];
    let mut i = 0;
    while i < lines.len() {
        let label = lines[i].trim_end();
        let slot = match label {
            "INPUT" => 0,
            "CONTESTANT" => 1,
            "REFERENCE" => 2,
            "" => {
                i += 1;
                continue;
            }
            other => return Err(format!("unexpected scenario line {other:?}")),
        };
        let (content, next) = fenced_content(lines, i + 1)
            .ok_or_else(|| format!("scenario section {label}: missing fence"))?;
        sections[slot] = Some(content);
        i = next;
    }
    match sections {
        [Some(input), Some(contestant), Some(reference)] => Ok((input, contestant, reference)),
        _ => Err("scenario missing one of INPUT/CONTESTANT/REFERENCE".into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedGenerator {
    pub strategy: GenStrategy,
    pub file: SourceFile,
    /// Argument strings, one per invocation, in declared order.
    pub invocations: Vec<String>,
}

/// `GENERATOR <strategy>` blocks: INVOKE/RANGE invocation lines, then the
/// FILE block with the program.
pub fn parse_generator_specs(items: &[String]) -> ParsedBatch<ParsedGenerator> {
    let mut out = ParsedBatch::new();
    for item in items {
        let Some(block) = block_lines(item) else {
            out.drops.push("empty item".into());
            continue;
        };
        let strategy = match block.header.strip_prefix("GENERATOR ").map(str::trim) {
            Some("exhaustive_small") => GenStrategy::ExhaustiveSmall,
            Some("random_extreme") => GenStrategy::RandomExtreme,
            Some("tle_inducing") => GenStrategy::TleInducing,
            _ => {
                out.drops
                    .push(format!("unrecognized generator header {:?}", block.header));
                continue;
            }
        };
        let mut invocations: Vec<String> = Vec::new();
        let mut file: Option<SourceFile> = None;
        let mut err: Option<String> = None;
        let lines = block.rest;
        let mut i = 0;
        while i < lines.len() {
            let line = lines[i].trim_end();
            if let Some(args) = line.strip_prefix("INVOKE ") {
                invocations.push(args.trim().to_string());
                i += 1;
            } else if let Some(range) = line.strip_prefix("RANGE ") {
                match parse_range(range) {
                    Ok(mut expanded) => invocations.append(&mut expanded),
                    Err(e) => {
                        err = Some(e);
                        break;
                    }
                }
                i += 1;
            } else if line.starts_with("FILE ") {
                match parse_file_at(&lines, i) {
                    Ok((f, next)) => {
                        file = Some(f);
                        i = next;
                    }
                    Err(e) => {
                        err = Some(e);
                        break;
                    }
                }
            } else if line.is_empty() {
                i += 1;
            } else {
                err = Some(format!("unexpected generator line {line:?}"));
                break;
            }
        }
        if let Some(e) = err {
            out.drops.push(format!("generator {strategy}: {e}"));
            continue;
        }
        let Some(file) = file else {
            out.drops
                .push(format!("generator {strategy}: missing FILE block"));
            continue;
        };
        if invocations.is_empty() {
            out.drops
                .push(format!("generator {strategy}: no invocations"));
            continue;
        }
        out.records.push(ParsedGenerator {
            strategy,
            file,
            invocations,
        });
    }
    out
}

/// `RANGE <start>..<end> <arg template>` expands {i} over [start, end).
fn parse_range(spec: &str) -> Result<Vec<String>, String> {
    let (range, template) = spec
        .split_once(' ')
        .ok_or_else(|| format!("malformed RANGE {spec:?}"))?;
    let (start, end) = range
        .split_once("..")
        .ok_or_else(|| format!("malformed RANGE bounds {range:?}"))?;
    let start: u64 = start.trim().parse().map_err(|_| format!("bad RANGE start {start:?}"))?;
    let end: u64 = end.trim().parse().map_err(|_| format!("bad RANGE end {end:?}"))?;
    if end < start || end - start > 100_000 {
        return Err(format!("RANGE {range:?} out of bounds"));
    }
    Ok((start..end)
        .map(|i| template.trim().replace("{i}", &i.to_string()))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedMutant {
    pub edit_kind: String,
    pub file: SourceFile,
}

/// `MUTANT <edit kind>` blocks wrapping a FILE block.
pub fn parse_mutants(items: &[String]) -> ParsedBatch<ParsedMutant> {
    let mut out = ParsedBatch::new();
    for item in items {
        let Some(block) = block_lines(item) else {
            out.drops.push("empty item".into());
            continue;
        };
        let Some(edit_kind) = block.header.strip_prefix("MUTANT ").map(str::trim) else {
            out.drops
                .push(format!("expected MUTANT block, got {:?}", block.header));
            continue;
        };
        let lines = block.rest;
        let file_idx = lines
            .iter()
            .position(|l| l.starts_with("FILE "))
            .ok_or("missing FILE");
        match file_idx {
            Ok(idx) => match parse_file_at(&lines, idx) {
                Ok((file, _)) => out.records.push(ParsedMutant {
                    edit_kind: edit_kind.to_string(),
                    file,
                }),
                Err(reason) => out.drops.push(format!("mutant {edit_kind}: {reason}")),
            },
            Err(e) => out.drops.push(format!("mutant {edit_kind}: {e}")),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedProblemTriple {
    pub statement: String,
    pub constraints: String,
    pub rating: Option<i32>,
    pub time_limit_ms: Option<u64>,
    pub memory_limit_mib: Option<u64>,
    pub std_source: SourceFile,
    pub brute_source: SourceFile,
}

/// A generated-problem response: STATEMENT plus std/brute sources, with
/// optional RATING and limit lines.
pub fn parse_problem_triple(items: &[String]) -> Result<ParsedProblemTriple, String> {
    let mut statement: Option<String> = None;
    let mut constraints = String::new();
    let mut rating: Option<i32> = None;
    let mut time_limit_ms: Option<u64> = None;
    let mut memory_limit_mib: Option<u64> = None;
    let mut std_source: Option<SourceFile> = None;
    let mut brute_source: Option<SourceFile> = None;

    for item in items {
        let Some(block) = block_lines(item) else { continue };
        let header = block.header.trim_end();
        if header == "STATEMENT" {
            let (content, _) =
                fenced_content(&block.rest, 0).ok_or("STATEMENT missing fenced text")?;
            statement = Some(String::from_utf8_lossy(&content).into_owned());
        } else if let Some(v) = header.strip_prefix("RATING ") {
            rating = v.trim().parse::<i32>().ok();
        } else if let Some(v) = header.strip_prefix("TIME_LIMIT_MS ") {
            time_limit_ms = v.trim().parse::<u64>().ok();
        } else if let Some(v) = header.strip_prefix("MEMORY_LIMIT_MIB ") {
            memory_limit_mib = v.trim().parse::<u64>().ok();
        } else if header.starts_with("FILE ") {
            let all: Vec<&str> = std::iter::once(block.header)
                .chain(block.rest.iter().copied())
                .collect();
            let (file, _) = parse_file_at(&all, 0)?;
            let stem = file.name.split('.').next().unwrap_or_default();
            match stem {
                "std" => std_source = Some(file),
                "brute" => brute_source = Some(file),
                "constraints" => constraints = file.source.clone(),
                other => return Err(format!("unexpected file {other:?} in problem triple")),
            }
        }
    }

    Ok(ParsedProblemTriple {
        statement: statement.ok_or("problem triple missing STATEMENT")?,
        constraints,
        rating,
        time_limit_ms,
        memory_limit_mib,
        std_source: std_source.ok_or("problem triple missing std source")?,
        brute_source: brute_source.ok_or("problem triple missing brute source")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_blocks_and_ignores_prose() {
        let raw = "Sure! Here are the programs you asked for.\n\nFILE a.py\n```\nprint(1)\n```\nSome commentary.\nFILE b.py\n```\nprint(2)\n```\nDone!\n";
        let items = split_blocks(raw);
        assert_eq!(items.len(), 2);
        let parsed = parse_source_files(&items);
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.records[0].name, "a.py");
        assert_eq!(parsed.records[0].source, "print(1)\n");
        assert!(parsed.drops.is_empty());
    }

    #[test]
    fn header_lines_inside_fences_are_content() {
        let raw = "FILE a.py\n```\nCASE valid\nprint(1)\n```\n";
        let items = split_blocks(raw);
        assert_eq!(items.len(), 1);
        let parsed = parse_source_files(&items);
        assert_eq!(parsed.records[0].source, "CASE valid\nprint(1)\n");
    }

    #[test]
    fn malformed_case_is_dropped_with_reason() {
        let raw = "CASE valid\n```\n1\n```\nCASE maybe\n```\n2\n```\nCASE invalid\nNOTE too big\n```\n101\n```\n";
        let items = split_blocks(raw);
        let parsed = parse_eval_cases(&items);
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.drops.len(), 1);
        assert!(parsed.drops[0].contains("maybe"));
        assert_eq!(parsed.records[0].input, b"1\n");
        assert!(parsed.records[0].valid);
        assert!(!parsed.records[1].valid);
        assert_eq!(parsed.records[1].note, "too big");
    }

    #[test]
    fn scenario_fields_parse() {
        let raw = "SCENARIO AC\nINPUT\n```\n3\n```\nCONTESTANT\n```\nYES\n```\nREFERENCE\n```\nYes\n```\n";
        let items = split_blocks(raw);
        let parsed = parse_checker_scenarios(&items);
        assert_eq!(parsed.records.len(), 1);
        let s = &parsed.records[0];
        assert!(s.expect_accept);
        assert_eq!(s.input, b"3\n");
        assert_eq!(s.contestant_out, b"YES\n");
        assert_eq!(s.ref_out, b"Yes\n");
    }

    #[test]
    fn generator_range_expands() {
        let raw = "GENERATOR exhaustive_small\nRANGE 0..3 case {i}\nINVOKE extra max\nFILE gen.py\n```\nprint(0)\n```\n";
        let items = split_blocks(raw);
        let parsed = parse_generator_specs(&items);
        assert_eq!(parsed.records.len(), 1);
        let g = &parsed.records[0];
        assert_eq!(g.strategy, GenStrategy::ExhaustiveSmall);
        assert_eq!(
            g.invocations,
            vec!["case 0", "case 1", "case 2", "extra max"]
        );
    }

    #[test]
    fn empty_response_has_no_blocks() {
        assert!(split_blocks("").is_empty());
        assert!(split_blocks("just prose\nno headers\n").is_empty());
    }

    #[test]
    fn problem_triple_requires_all_parts() {
        let raw = "STATEMENT\n```\nCompute the thing.\n```\nRATING 1500\nFILE std.py\n```\nprint(1)\n```\n";
        let items = split_blocks(raw);
        let err = parse_problem_triple(&items).unwrap_err();
        assert!(err.contains("brute"), "{err}");
    }
}
