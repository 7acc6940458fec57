//! Tree ingestion: the two tree file formats, token spans, and projection
//! of labeled spans onto dependency nodes.
//!
//! Constituency trees arrive one s-expression per line, strictly binary at
//! interior nodes, with an integer label at every node and a token at every
//! leaf. Dependency trees arrive as blank-line-separated blocks of
//! `index<TAB>token<TAB>head` rows with 1-based indices and head `0`
//! marking the root.

use std::collections::HashMap;
use std::io::BufRead;

use thiserror::Error;

/// Hard bound on sentence length; parses beyond it are rejected so that
/// downstream traversals have a known stack/size budget.
pub const MAX_TOKENS: usize = 400;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("constituency parse error at char {offset}: {message}")]
    Constituency { offset: usize, message: String },
    #[error("dependency structure error at row {row}: {message}")]
    Dependency { row: usize, message: String },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("sentence has {got} tokens, over the {MAX_TOKENS}-token limit")]
    TooLong { got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeKind {
    Constituency,
    Dependency,
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Index into [`Tree::tokens`] for the word observed at this node, if any.
    pub token: Option<usize>,
    pub label: Option<u32>,
    /// Sorted token indices covered by the subtree rooted here.
    pub span: Vec<usize>,
}

/// Rooted ordered tree over one sentence.
#[derive(Debug, Clone)]
pub struct Tree {
    pub kind: TreeKind,
    pub nodes: Vec<TreeNode>,
    pub root: usize,
    pub tokens: Vec<String>,
}

impl Tree {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn sentence_len(&self) -> usize {
        self.tokens.len()
    }

    /// Children-before-parent traversal order, computed iteratively.
    pub fn post_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
            } else {
                stack.push((node, true));
                for &c in self.nodes[node].children.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        order
    }

    /// Maximum number of children over all nodes.
    pub fn max_arity(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.children.len())
            .max()
            .unwrap_or(0)
    }

    /// Whether a node's span is a contiguous token range.
    pub fn span_is_contiguous(&self, node: usize) -> bool {
        let span = &self.nodes[node].span;
        match (span.first(), span.last()) {
            (Some(&a), Some(&b)) => b - a + 1 == span.len(),
            _ => false,
        }
    }

    /// Serialize a constituency tree back to its s-expression line.
    pub fn to_sexpr(&self) -> String {
        fn write_node(tree: &Tree, node: usize, out: &mut String) {
            let n = &tree.nodes[node];
            out.push('(');
            out.push_str(&n.label.map_or_else(|| "_".into(), |l| l.to_string()));
            if let Some(tok) = n.token {
                out.push(' ');
                out.push_str(&tree.tokens[tok]);
            }
            for &c in &n.children {
                out.push(' ');
                write_node(tree, c, out);
            }
            out.push(')');
        }
        // Depth is bounded by MAX_TOKENS, so recursion is safe here.
        let mut out = String::new();
        write_node(self, self.root, &mut out);
        out
    }
}

struct SexprFrame {
    label: Option<u32>,
    children: Vec<usize>,
    token: Option<usize>,
    open_offset: usize,
}

/// Parse one constituency tree from a single s-expression line.
pub fn parse_constituency(text: &str) -> Result<Tree, TreeError> {
    let err = |offset: usize, message: &str| TreeError::Constituency {
        offset,
        message: message.to_string(),
    };

    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut stack: Vec<SexprFrame> = Vec::new();
    let mut root: Option<usize> = None;

    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '(' {
            if root.is_some() {
                return Err(err(i, "content after root expression"));
            }
            stack.push(SexprFrame {
                label: None,
                children: Vec::new(),
                token: None,
                open_offset: i,
            });
            i += 1;
        } else if c == ')' {
            let frame = match stack.pop() {
                Some(f) => f,
                None => return Err(err(i, "unbalanced ')'")),
            };
            let label = match frame.label {
                Some(l) => l,
                None => return Err(err(frame.open_offset, "node without a label")),
            };
            if frame.token.is_none() && frame.children.is_empty() {
                return Err(err(frame.open_offset, "empty leaf"));
            }
            if frame.token.is_some() && !frame.children.is_empty() {
                return Err(err(frame.open_offset, "node mixes a token with subtrees"));
            }
            if frame.token.is_none() && frame.children.len() != 2 {
                return Err(err(
                    frame.open_offset,
                    &format!(
                        "interior node has {} children, trees must be binary",
                        frame.children.len()
                    ),
                ));
            }
            let span = match frame.token {
                Some(t) => vec![t],
                None => {
                    let mut s: Vec<usize> = frame
                        .children
                        .iter()
                        .flat_map(|&c| nodes[c].span.iter().copied())
                        .collect();
                    s.sort_unstable();
                    s
                }
            };
            let id = nodes.len();
            for &c in &frame.children {
                nodes[c].parent = Some(id);
            }
            nodes.push(TreeNode {
                parent: None,
                children: frame.children,
                token: frame.token,
                label: Some(label),
                span,
            });
            match stack.last_mut() {
                Some(parent) => parent.children.push(id),
                None => root = Some(id),
            }
            i += 1;
        } else {
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() && chars[i] != '(' && chars[i] != ')'
            {
                i += 1;
            }
            let atom: String = chars[start..i].iter().collect();
            let frame = match stack.last_mut() {
                Some(f) => f,
                None => return Err(err(start, "token outside any expression")),
            };
            if frame.label.is_none() {
                let label: u32 = atom.parse().map_err(|_| {
                    err(
                        start,
                        &format!("label `{atom}` is not a non-negative integer"),
                    )
                })?;
                frame.label = Some(label);
            } else if frame.token.is_none() && frame.children.is_empty() {
                if tokens.len() >= MAX_TOKENS {
                    return Err(TreeError::TooLong {
                        got: tokens.len() + 1,
                    });
                }
                frame.token = Some(tokens.len());
                tokens.push(atom);
            } else {
                return Err(err(start, "leaf carries more than one token"));
            }
        }
    }
    if let Some(frame) = stack.last() {
        return Err(err(frame.open_offset, "unbalanced '('"));
    }
    let root = root.ok_or_else(|| err(0, "empty input"))?;
    Ok(Tree {
        kind: TreeKind::Constituency,
        nodes,
        root,
        tokens,
    })
}

/// Parse one dependency tree from `(index, token, head)` rows.
///
/// Indices are 1-based and must be contiguous; head `0` marks the root.
/// Node `i` of the result corresponds to token `i` (0-based), and children
/// are ordered by token index.
pub fn parse_dependency(rows: &[(usize, String, usize)]) -> Result<Tree, TreeError> {
    let err = |row: usize, message: String| TreeError::Dependency { row, message };
    let n = rows.len();
    if n == 0 {
        return Err(err(0, "empty sentence block".into()));
    }
    if n > MAX_TOKENS {
        return Err(TreeError::TooLong { got: n });
    }
    for (i, (idx, _, head)) in rows.iter().enumerate() {
        if *idx != i + 1 {
            return Err(err(i + 1, format!("expected index {}, found {idx}", i + 1)));
        }
        if *head > n {
            return Err(err(i + 1, format!("head {head} out of range 1..{n}")));
        }
        if *head == i + 1 {
            return Err(err(i + 1, "self-loop cycle".into()));
        }
    }
    let mut root: Option<usize> = None;
    for (i, (_, _, head)) in rows.iter().enumerate() {
        if *head == 0 {
            if let Some(prev) = root {
                return Err(err(
                    i + 1,
                    format!("multiple roots (rows {} and {})", prev + 1, i + 1),
                ));
            }
            root = Some(i);
        }
    }
    let root = root.ok_or_else(|| err(n, "no root row (head 0)".into()))?;

    let mut nodes: Vec<TreeNode> = (0..n)
        .map(|i| TreeNode {
            parent: None,
            children: Vec::new(),
            token: Some(i),
            label: None,
            span: Vec::new(),
        })
        .collect();
    for (i, (_, _, head)) in rows.iter().enumerate() {
        if *head != 0 {
            let parent = head - 1;
            nodes[i].parent = Some(parent);
            nodes[parent].children.push(i);
        }
    }
    // Children were inserted in token order already; reachability from the
    // root decides whether the head links form a tree.
    let mut reached = vec![false; n];
    let mut stack = vec![root];
    let mut count = 0;
    while let Some(u) = stack.pop() {
        if reached[u] {
            continue;
        }
        reached[u] = true;
        count += 1;
        stack.extend(nodes[u].children.iter().copied());
    }
    if count != n {
        let cyclic = reached.iter().position(|r| !r).unwrap();
        return Err(err(cyclic + 1, "row is part of a cycle".into()));
    }

    let tokens = rows.iter().map(|(_, t, _)| t.clone()).collect();
    let mut tree = Tree {
        kind: TreeKind::Dependency,
        nodes,
        root,
        tokens,
    };
    for node in tree.post_order() {
        let mut span: Vec<usize> = tree.nodes[node]
            .children
            .iter()
            .flat_map(|&c| tree.nodes[c].span.iter().copied())
            .collect();
        span.push(node);
        span.sort_unstable();
        tree.nodes[node].span = span;
    }
    Ok(tree)
}

/// Outcome of projecting labeled spans onto a dependency tree.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionStats {
    pub nodes: usize,
    pub matched: usize,
}

impl ProjectionStats {
    pub fn match_rate(&self) -> f64 {
        if self.nodes == 0 {
            return 0.0;
        }
        self.matched as f64 / self.nodes as f64
    }
}

/// Labels for one sentence keyed by token span `(start, end)`, end exclusive.
pub type SpanLabels = HashMap<(usize, usize), u32>;

/// Assign a label to every node whose subtree token set is exactly the
/// contiguous range `[start, end)` of some labeled span; all other nodes
/// keep no label. Nodes with non-contiguous token sets can never match,
/// which is what leaves a fraction of dependency nodes unlabeled in
/// practice.
pub fn project_labels(tree: &mut Tree, spans: &SpanLabels) -> ProjectionStats {
    let mut matched = 0;
    for i in 0..tree.nodes.len() {
        if !tree.span_is_contiguous(i) {
            continue;
        }
        let span = &tree.nodes[i].span;
        let key = (span[0], span[span.len() - 1] + 1);
        if let Some(&label) = spans.get(&key) {
            tree.nodes[i].label = Some(label);
            matched += 1;
        }
    }
    ProjectionStats {
        nodes: tree.nodes.len(),
        matched,
    }
}

/// Read a constituency file: one s-expression per line, blank lines skipped.
pub fn read_constituency<R: BufRead>(reader: R) -> Result<Vec<Tree>, TreeError> {
    let mut trees = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TreeError::Format {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let tree = parse_constituency(&line).map_err(|e| TreeError::Format {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        trees.push(tree);
    }
    Ok(trees)
}

/// Read a dependency file: TAB-separated `index token head` rows, sentences
/// separated by blank lines.
pub fn read_dependency<R: BufRead>(reader: R) -> Result<Vec<Tree>, TreeError> {
    let mut trees = Vec::new();
    let mut block: Vec<(usize, String, usize)> = Vec::new();
    let mut block_start = 1;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TreeError::Format {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            if !block.is_empty() {
                let tree = parse_dependency(&block).map_err(|e| TreeError::Format {
                    line: block_start,
                    message: e.to_string(),
                })?;
                trees.push(tree);
                block.clear();
            }
            continue;
        }
        if block.is_empty() {
            block_start = lineno + 1;
        }
        let mut parts = line.split('\t');
        let row = (|| {
            let idx: usize = parts.next()?.trim().parse().ok()?;
            let token = parts.next()?.trim().to_string();
            let head: usize = parts.next()?.trim().parse().ok()?;
            if token.is_empty() {
                return None;
            }
            Some((idx, token, head))
        })()
        .ok_or_else(|| TreeError::Format {
            line: lineno + 1,
            message: "expected `index<TAB>token<TAB>head`".into(),
        })?;
        block.push(row);
    }
    if !block.is_empty() {
        let tree = parse_dependency(&block).map_err(|e| TreeError::Format {
            line: block_start,
            message: e.to_string(),
        })?;
        trees.push(tree);
    }
    Ok(trees)
}

/// Read a span-label file: `start<TAB>end<TAB>label` rows (end exclusive),
/// one blank-line-separated group per sentence.
pub fn read_spans<R: BufRead>(reader: R) -> Result<Vec<SpanLabels>, TreeError> {
    let mut groups = Vec::new();
    let mut group: SpanLabels = HashMap::new();
    let mut saw_rows = false;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TreeError::Format {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            if saw_rows {
                groups.push(std::mem::take(&mut group));
                saw_rows = false;
            }
            continue;
        }
        saw_rows = true;
        let mut parts = line.split('\t');
        let parsed = (|| {
            let start: usize = parts.next()?.trim().parse().ok()?;
            let end: usize = parts.next()?.trim().parse().ok()?;
            let label: u32 = parts.next()?.trim().parse().ok()?;
            (start < end).then_some(((start, end), label))
        })()
        .ok_or_else(|| TreeError::Format {
            line: lineno + 1,
            message: "expected `start<TAB>end<TAB>label` with start < end".into(),
        })?;
        group.insert(parsed.0, parsed.1);
    }
    if saw_rows {
        groups.push(group);
    }
    Ok(groups)
}

/// One row of a sentence-pair file.
#[derive(Debug, Clone)]
pub struct PairRecord {
    pub id: String,
    pub sentence_a: String,
    pub sentence_b: String,
    pub score: f64,
}

/// Read a relatedness pair file: TSV with a header naming at least
/// `pair_ID`, `sentence_A`, `sentence_B`, and `relatedness_score` columns.
pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<PairRecord>, TreeError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(TreeError::Format {
        line: 1,
        message: "missing header row".into(),
    })?;
    let header = header.map_err(|e| TreeError::Format {
        line: 1,
        message: e.to_string(),
    })?;
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let col = |name: &str| {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| TreeError::Format {
                line: 1,
                message: format!("header is missing column `{name}`"),
            })
    };
    let (ci, ca, cb, cs) = (
        col("pair_ID")?,
        col("sentence_A")?,
        col("sentence_B")?,
        col("relatedness_score")?,
    );
    let mut out = Vec::new();
    for (lineno, line) in lines {
        let line = line.map_err(|e| TreeError::Format {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let need = [ci, ca, cb, cs].into_iter().max().unwrap();
        if fields.len() <= need {
            return Err(TreeError::Format {
                line: lineno + 1,
                message: format!("row has {} fields, header implies > {need}", fields.len()),
            });
        }
        let score: f64 = fields[cs].trim().parse().map_err(|_| TreeError::Format {
            line: lineno + 1,
            message: format!("relatedness_score `{}` is not a number", fields[cs]),
        })?;
        out.push(PairRecord {
            id: fields[ci].trim().to_string(),
            sentence_a: fields[ca].trim().to_string(),
            sentence_b: fields[cb].trim().to_string(),
            score,
        });
    }
    Ok(out)
}
