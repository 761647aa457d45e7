//! Parser for the Bayesian Interchange Format (BIF 0.15) and conversion of
//! parsed networks into ground-truth [`CategoricalScm`] values.
//!
//! The dialect accepted here covers what the BnLearn repository actually
//! ships: `network`, `variable`, and `probability` blocks, `//` and `/* */`
//! comments, `property` statements (skipped silently), and both row forms
//! inside probability blocks:
//!
//! - keyed rows `(label, label) p1, p2;` — one row per parent configuration,
//! - a flat `table p1, p2, ...;` — for root nodes this is just the marginal;
//!   with parents the values are listed with the target's category as the
//!   outermost (slowest) axis and the last-listed parent as the fastest,
//!   matching the JavaBayes convention of nested loops over the block header
//!   variables.
//!
//! Any other directive is skipped and recorded in the document's warning
//! list rather than failing the parse. Category labels map to indices in
//! declaration order, which fixes the meaning of every dataset sampled from
//! the converted SCM. Parent axes are reordered to ascending node order
//! during conversion because repository files list parents in arbitrary
//! order while [`Cpt`] requires the canonical one.

use std::collections::{HashMap, HashSet};

use causalprobe_core::graph::Dag;
use causalprobe_core::scm::{index_to_config, state_count, CategoricalScm, Cpt};

use crate::{Error, Result};

/// Node counts of the repository networks this artifact knows by name,
/// checked at ingestion time when a file stem matches.
pub const KNOWN_NODE_COUNTS: [(&str, usize); 6] = [
    ("alarm", 37),
    ("asia", 8),
    ("cancer", 5),
    ("child", 20),
    ("earthquake", 5),
    ("sachs", 11),
];

/// One declared discrete variable: name plus category labels in declaration
/// order (the order that defines category indices everywhere downstream).
#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub labels: Vec<String>,
}

/// The body of a probability block, preserving which syntactic form the
/// file used so serialization round-trips structurally.
#[derive(Debug, Clone, PartialEq)]
pub enum Rows {
    /// `table v, v, ...;` — flat list, target category outermost.
    Table(Vec<f64>),
    /// `(label, ...) v, v;` — one entry per parent configuration.
    Keyed(Vec<(Vec<String>, Vec<f64>)>),
}

/// `probability ( target | parents... ) { ... }` with parents in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityBlock {
    pub target: String,
    pub parents: Vec<String>,
    pub rows: Rows,
}

/// A fully parsed BIF document.
#[derive(Debug, Clone, PartialEq)]
pub struct BifDocument {
    pub network: String,
    pub variables: Vec<Variable>,
    pub blocks: Vec<ProbabilityBlock>,
    /// Human-readable notes about skipped directives; empty for clean files.
    pub warnings: Vec<String>,
}

impl BifDocument {
    pub fn n(&self) -> usize {
        self.variables.len()
    }

    fn variable_index(&self) -> HashMap<&str, usize> {
        self.variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.as_str(), i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Punct(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const PUNCT: &str = "{}()[]|,;";

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1usize, 1usize);

    macro_rules! bump {
        ($c:expr) => {
            if $c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
        };
    }

    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            bump!(c);
            continue;
        }
        if c == '/' {
            let (start_line, start_col) = (line, col);
            chars.next();
            bump!(c);
            match chars.peek() {
                Some('/') => {
                    for c in chars.by_ref() {
                        bump!(c);
                        if c == '\n' {
                            break;
                        }
                    }
                }
                Some('*') => {
                    chars.next();
                    bump!('*');
                    let mut prev = '\0';
                    let mut closed = false;
                    for c in chars.by_ref() {
                        bump!(c);
                        if prev == '*' && c == '/' {
                            closed = true;
                            break;
                        }
                        prev = c;
                    }
                    if !closed {
                        return Err(Error::Syntax {
                            line: start_line,
                            col: start_col,
                            msg: "unterminated block comment".into(),
                        });
                    }
                }
                _ => {
                    return Err(Error::Syntax {
                        line: start_line,
                        col: start_col,
                        msg: "stray `/`".into(),
                    });
                }
            }
            continue;
        }
        if c == '"' {
            // Quoted strings only appear in property values, which are
            // skipped wholesale; keep them atomic so an embedded `;` or
            // brace cannot derail statement skipping.
            let (start_line, start_col) = (line, col);
            chars.next();
            bump!(c);
            let mut s = String::new();
            let mut closed = false;
            for c in chars.by_ref() {
                bump!(c);
                if c == '"' {
                    closed = true;
                    break;
                }
                s.push(c);
            }
            if !closed {
                return Err(Error::Syntax {
                    line: start_line,
                    col: start_col,
                    msg: "unterminated string".into(),
                });
            }
            out.push(Token {
                tok: Tok::Word(s),
                line: start_line,
                col: start_col,
            });
            continue;
        }
        if PUNCT.contains(c) {
            out.push(Token {
                tok: Tok::Punct(c),
                line,
                col,
            });
            chars.next();
            bump!(c);
            continue;
        }
        let (start_line, start_col) = (line, col);
        let mut word = String::new();
        while let Some(&c) = chars.peek() {
            if c.is_whitespace() || PUNCT.contains(c) || c == '"' || c == '/' {
                break;
            }
            word.push(c);
            chars.next();
            bump!(c);
        }
        out.push(Token {
            tok: Tok::Word(word),
            line: start_line,
            col: start_col,
        });
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    warnings: Vec<String>,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, msg: impl Into<String>) -> Error {
        let (line, col) = self
            .tokens
            .get(self.pos.min(self.tokens.len().saturating_sub(1)))
            .map(|t| (t.line, t.col))
            .unwrap_or((0, 0));
        Error::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn expect_word(&mut self, what: &str) -> Result<String> {
        match self.next() {
            Some(Token {
                tok: Tok::Word(w), ..
            }) => Ok(w),
            Some(t) => Err(Error::Syntax {
                line: t.line,
                col: t.col,
                msg: format!("expected {what}"),
            }),
            None => Err(self.err_here(format!("expected {what}, found end of input"))),
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<()> {
        match self.next() {
            Some(Token { tok: Tok::Punct(p), .. }) if p == c => Ok(()),
            Some(t) => Err(Error::Syntax {
                line: t.line,
                col: t.col,
                msg: format!("expected `{c}`"),
            }),
            None => Err(self.err_here(format!("expected `{c}`, found end of input"))),
        }
    }

    fn at_punct(&self, c: char) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Punct(p), .. }) if *p == c)
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.at_punct(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    /// Consumes the remainder of a statement: everything up to and
    /// including the next `;`, balancing any braces along the way.
    fn skip_statement(&mut self) -> Result<()> {
        let mut depth = 0usize;
        while let Some(t) = self.next() {
            match t.tok {
                Tok::Punct('{') => depth += 1,
                Tok::Punct('}') => {
                    depth = depth.checked_sub(1).ok_or(Error::Syntax {
                        line: t.line,
                        col: t.col,
                        msg: "unbalanced `}` while skipping statement".into(),
                    })?;
                }
                Tok::Punct(';') if depth == 0 => return Ok(()),
                _ => {}
            }
        }
        Err(self.err_here("unterminated statement"))
    }

    /// Consumes a balanced `{ ... }` body, assuming the `{` is next.
    fn skip_block(&mut self) -> Result<()> {
        self.expect_punct('{')?;
        let mut depth = 1usize;
        while let Some(t) = self.next() {
            match t.tok {
                Tok::Punct('{') => depth += 1,
                Tok::Punct('}') => {
                    depth -= 1;
                    if depth == 0 {
                        return Ok(());
                    }
                }
                _ => {}
            }
        }
        Err(self.err_here("unterminated block"))
    }

    fn parse_network(&mut self) -> Result<String> {
        let mut name_parts = Vec::new();
        while let Some(t) = self.peek() {
            match &t.tok {
                Tok::Word(w) => {
                    name_parts.push(w.clone());
                    self.pos += 1;
                }
                _ => break,
            }
        }
        self.expect_punct('{')?;
        while !self.eat_punct('}') {
            match self.next() {
                Some(Token {
                    tok: Tok::Word(w), ..
                }) => {
                    if w != "property" {
                        self.warnings
                            .push(format!("skipped `{w}` inside network block"));
                    }
                    self.skip_statement()?;
                }
                Some(t) => {
                    return Err(Error::Syntax {
                        line: t.line,
                        col: t.col,
                        msg: "expected statement or `}` in network block".into(),
                    })
                }
                None => return Err(self.err_here("unterminated network block")),
            }
        }
        Ok(name_parts.join(" "))
    }

    fn parse_variable(&mut self) -> Result<Variable> {
        let name = self.expect_word("variable name")?;
        self.expect_punct('{')?;
        let mut labels: Option<Vec<String>> = None;
        while !self.eat_punct('}') {
            let word = self.expect_word("statement")?;
            match word.as_str() {
                "type" => {
                    let kind = self.expect_word("variable type")?;
                    if kind != "discrete" {
                        return Err(Error::Format(format!(
                            "variable `{name}`: unsupported type `{kind}` (only discrete)"
                        )));
                    }
                    self.expect_punct('[')?;
                    let count_word = self.expect_word("category count")?;
                    let count: usize = count_word.parse().map_err(|_| {
                        Error::Format(format!(
                            "variable `{name}`: bad category count `{count_word}`"
                        ))
                    })?;
                    self.expect_punct(']')?;
                    self.expect_punct('{')?;
                    let mut ls = Vec::new();
                    loop {
                        ls.push(self.expect_word("category label")?);
                        if self.eat_punct(',') {
                            continue;
                        }
                        self.expect_punct('}')?;
                        break;
                    }
                    self.expect_punct(';')?;
                    if ls.len() != count {
                        return Err(Error::Format(format!(
                            "variable `{name}`: declared {count} categories but listed {}",
                            ls.len()
                        )));
                    }
                    labels = Some(ls);
                }
                "property" => self.skip_statement()?,
                other => {
                    self.warnings
                        .push(format!("skipped `{other}` inside variable `{name}`"));
                    self.skip_statement()?;
                }
            }
        }
        let labels = labels.ok_or_else(|| {
            Error::Format(format!("variable `{name}` has no type declaration"))
        })?;
        if labels.len() < 2 {
            return Err(Error::Format(format!(
                "variable `{name}` has {} category; at least 2 required",
                labels.len()
            )));
        }
        Ok(Variable { name, labels })
    }

    fn parse_numbers_until_semicolon(&mut self) -> Result<Vec<f64>> {
        let mut values = Vec::new();
        loop {
            if self.eat_punct(';') {
                return Ok(values);
            }
            if self.eat_punct(',') {
                continue;
            }
            match self.next() {
                Some(Token {
                    tok: Tok::Word(w),
                    line,
                    col,
                }) => {
                    let v: f64 = w.parse().map_err(|_| Error::Syntax {
                        line,
                        col,
                        msg: format!("expected probability value, found `{w}`"),
                    })?;
                    values.push(v);
                }
                Some(t) => {
                    return Err(Error::Syntax {
                        line: t.line,
                        col: t.col,
                        msg: "expected probability value".into(),
                    })
                }
                None => return Err(self.err_here("unterminated probability row")),
            }
        }
    }

    fn parse_probability(&mut self) -> Result<ProbabilityBlock> {
        self.expect_punct('(')?;
        let target = self.expect_word("target variable")?;
        let mut parents = Vec::new();
        if self.eat_punct('|') {
            loop {
                parents.push(self.expect_word("parent variable")?);
                if self.eat_punct(',') {
                    continue;
                }
                break;
            }
        }
        self.expect_punct(')')?;
        self.expect_punct('{')?;

        let mut table: Option<Vec<f64>> = None;
        let mut keyed: Vec<(Vec<String>, Vec<f64>)> = Vec::new();
        while !self.eat_punct('}') {
            if self.at_punct('(') {
                self.expect_punct('(')?;
                let mut key = Vec::new();
                if !self.eat_punct(')') {
                    loop {
                        key.push(self.expect_word("category label")?);
                        if self.eat_punct(',') {
                            continue;
                        }
                        self.expect_punct(')')?;
                        break;
                    }
                }
                keyed.push((key, self.parse_numbers_until_semicolon()?));
                continue;
            }
            let word = self.expect_word("row or statement")?;
            match word.as_str() {
                "table" => {
                    if table.is_some() {
                        return Err(Error::Format(format!(
                            "probability block for `{target}` has two table rows"
                        )));
                    }
                    table = Some(self.parse_numbers_until_semicolon()?);
                }
                "property" => self.skip_statement()?,
                other => {
                    self.warnings.push(format!(
                        "skipped `{other}` inside probability block for `{target}`"
                    ));
                    self.skip_statement()?;
                }
            }
        }

        let rows = match (table, keyed.is_empty()) {
            (Some(t), true) => Rows::Table(t),
            (None, false) => Rows::Keyed(keyed),
            (Some(_), false) => {
                return Err(Error::Format(format!(
                    "probability block for `{target}` mixes table and keyed rows"
                )))
            }
            (None, true) => {
                return Err(Error::Format(format!(
                    "probability block for `{target}` has no rows"
                )))
            }
        };
        Ok(ProbabilityBlock {
            target,
            parents,
            rows,
        })
    }
}

/// Parses a BIF 0.15-style document and validates its internal references.
pub fn parse_bif(text: &str) -> Result<BifDocument> {
    let tokens = tokenize(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        warnings: Vec::new(),
    };
    let mut network = String::new();
    let mut variables = Vec::new();
    let mut blocks = Vec::new();

    while let Some(t) = p.peek() {
        let t = t.clone();
        match &t.tok {
            Tok::Word(w) => match w.as_str() {
                "network" => {
                    p.pos += 1;
                    network = p.parse_network()?;
                }
                "variable" => {
                    p.pos += 1;
                    variables.push(p.parse_variable()?);
                }
                "probability" => {
                    p.pos += 1;
                    blocks.push(p.parse_probability()?);
                }
                other => {
                    p.warnings
                        .push(format!("skipped unknown directive `{other}`"));
                    p.pos += 1;
                    // A directive is either a braced block (possibly with a
                    // name) or a plain statement; consume whichever shape
                    // comes first.
                    loop {
                        match p.peek().map(|t| t.tok.clone()) {
                            Some(Tok::Punct('{')) => {
                                p.skip_block()?;
                                break;
                            }
                            Some(Tok::Punct(';')) => {
                                p.pos += 1;
                                break;
                            }
                            Some(_) => p.pos += 1,
                            None => break,
                        }
                    }
                }
            },
            Tok::Punct(c) => {
                return Err(Error::Syntax {
                    line: t.line,
                    col: t.col,
                    msg: format!("unexpected `{c}` at top level"),
                })
            }
        }
    }

    let doc = BifDocument {
        network,
        variables,
        blocks,
        warnings: p.warnings,
    };
    validate(&doc)?;
    Ok(doc)
}

fn validate(doc: &BifDocument) -> Result<()> {
    let mut seen = HashSet::new();
    for v in &doc.variables {
        if !seen.insert(v.name.as_str()) {
            return Err(Error::Format(format!(
                "variable `{}` declared twice",
                v.name
            )));
        }
        let mut labels = HashSet::new();
        for l in &v.labels {
            if !labels.insert(l.as_str()) {
                return Err(Error::Format(format!(
                    "variable `{}` has duplicate category `{l}`",
                    v.name
                )));
            }
        }
    }

    let index = doc.variable_index();
    let mut covered = HashSet::new();
    for block in &doc.blocks {
        let target = &block.target;
        let &t = index
            .get(target.as_str())
            .ok_or_else(|| Error::Undeclared(target.clone()))?;
        if !covered.insert(t) {
            return Err(Error::Format(format!(
                "two probability blocks for `{target}`"
            )));
        }
        let card = doc.variables[t].labels.len();

        let mut parent_ids = Vec::with_capacity(block.parents.len());
        for name in &block.parents {
            let &p = index
                .get(name.as_str())
                .ok_or_else(|| Error::Undeclared(name.clone()))?;
            if parent_ids.contains(&p) {
                return Err(Error::Format(format!(
                    "probability block for `{target}` lists parent `{name}` twice"
                )));
            }
            parent_ids.push(p);
        }
        let parent_cards: Vec<usize> = parent_ids
            .iter()
            .map(|&p| doc.variables[p].labels.len())
            .collect();
        let configs = state_count(&parent_cards).ok_or_else(|| {
            Error::Format(format!(
                "probability block for `{target}`: parent state space overflows"
            ))
        })?;

        match &block.rows {
            Rows::Table(values) => {
                if values.len() != configs * card {
                    return Err(Error::Format(format!(
                        "probability block for `{target}`: table has {} values, \
                         expected {card} x {configs} parent configurations",
                        values.len()
                    )));
                }
            }
            Rows::Keyed(rows) => {
                let mut seen_keys = HashSet::new();
                for (key, values) in rows {
                    if key.len() != block.parents.len() {
                        return Err(Error::Format(format!(
                            "probability block for `{target}`: row key ({}) has {} labels \
                             for {} parents",
                            key.join(", "),
                            key.len(),
                            block.parents.len()
                        )));
                    }
                    let mut config = Vec::with_capacity(key.len());
                    for (label, &p) in key.iter().zip(&parent_ids) {
                        let var = &doc.variables[p];
                        let li = var.labels.iter().position(|l| l == label).ok_or_else(|| {
                            Error::Format(format!(
                                "probability block for `{target}`: `{label}` is not a \
                                 category of `{}`",
                                var.name
                            ))
                        })?;
                        config.push(li);
                    }
                    if !seen_keys.insert(config) {
                        return Err(Error::Format(format!(
                            "probability block for `{target}`: configuration ({}) \
                             listed twice",
                            key.join(", ")
                        )));
                    }
                    if values.len() != card {
                        return Err(Error::Format(format!(
                            "probability block for `{target}`: row ({}) has {} values \
                             for {card} categories",
                            key.join(", "),
                            values.len()
                        )));
                    }
                }
                if rows.len() != configs {
                    return Err(Error::Format(format!(
                        "probability block for `{target}` covers {} of {configs} \
                         parent configurations",
                        rows.len()
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Converts a validated document into a ground-truth SCM. Category labels
/// become indices in declaration order; parent axes are permuted into
/// ascending node order; probabilities are copied bit-exactly.
pub fn to_scm(doc: &BifDocument) -> Result<CategoricalScm> {
    let n = doc.n();
    let index = doc.variable_index();
    let cards: Vec<usize> = doc.variables.iter().map(|v| v.labels.len()).collect();

    let mut block_of = vec![None; n];
    let mut edges = Vec::new();
    for block in &doc.blocks {
        let t = index[block.target.as_str()];
        block_of[t] = Some(block);
        for p in &block.parents {
            edges.push((index[p.as_str()], t));
        }
    }
    for (i, b) in block_of.iter().enumerate() {
        if b.is_none() {
            return Err(Error::Format(format!(
                "no probability block for `{}`",
                doc.variables[i].name
            )));
        }
    }
    let dag = Dag::from_edges(n, &edges)?;

    let mut cpts = Vec::with_capacity(n);
    for t in 0..n {
        let block = block_of[t].unwrap();
        let card = cards[t];
        let file_parents: Vec<usize> = block.parents.iter().map(|p| index[p.as_str()]).collect();
        let file_cards: Vec<usize> = file_parents.iter().map(|&p| cards[p]).collect();
        let configs = state_count(&file_cards).unwrap();

        // Row lookup in file parent order: configuration -> distribution.
        let lookup: Vec<Vec<f64>> = match &block.rows {
            Rows::Table(values) => (0..configs)
                .map(|q| (0..card).map(|v| values[v * configs + q]).collect())
                .collect(),
            Rows::Keyed(rows) => {
                let mut by_config = vec![Vec::new(); configs];
                for (key, values) in rows {
                    let mut q = 0;
                    for ((label, &p), &c) in key.iter().zip(&file_parents).zip(&file_cards) {
                        let li = doc.variables[p]
                            .labels
                            .iter()
                            .position(|l| l == label)
                            .unwrap();
                        q = q * c + li;
                    }
                    by_config[q] = values.clone();
                }
                by_config
            }
        };

        // Permute the parent axes into ascending node order.
        let mut order: Vec<usize> = (0..file_parents.len()).collect();
        order.sort_by_key(|&k| file_parents[k]);
        let sorted_parents: Vec<usize> = order.iter().map(|&k| file_parents[k]).collect();
        let sorted_cards: Vec<usize> = order.iter().map(|&k| file_cards[k]).collect();

        let mut table = Vec::with_capacity(configs * card);
        for r in 0..configs {
            let sorted_config = index_to_config(r, &sorted_cards);
            let mut q = 0;
            for (k, &c) in file_cards.iter().enumerate() {
                let pos_in_sorted = order.iter().position(|&o| o == k).unwrap();
                q = q * c + sorted_config[pos_in_sorted] as usize;
            }
            table.extend_from_slice(&lookup[q]);
        }
        cpts.push(Cpt::new(t, sorted_parents, sorted_cards, card, table)?);
    }

    Ok(CategoricalScm::new(dag, cards, cpts)?)
}

/// Renders a document back to BIF text. Each block keeps the row form it
/// was parsed with, so `parse_bif(serialize_bif(doc)) == doc` for any
/// document this module produces or accepts.
pub fn serialize_bif(doc: &BifDocument) -> String {
    let mut out = String::new();
    out.push_str(&format!("network {} {{\n}}\n", doc.network));
    for v in &doc.variables {
        out.push_str(&format!(
            "variable {} {{\n  type discrete [ {} ] {{ {} }};\n}}\n",
            v.name,
            v.labels.len(),
            v.labels.join(", ")
        ));
    }
    for b in &doc.blocks {
        if b.parents.is_empty() {
            out.push_str(&format!("probability ( {} ) {{\n", b.target));
        } else {
            out.push_str(&format!(
                "probability ( {} | {} ) {{\n",
                b.target,
                b.parents.join(", ")
            ));
        }
        match &b.rows {
            Rows::Table(values) => {
                out.push_str(&format!("  table {};\n", join_floats(values)));
            }
            Rows::Keyed(rows) => {
                for (key, values) in rows {
                    out.push_str(&format!(
                        "  ({}) {};\n",
                        key.join(", "),
                        join_floats(values)
                    ));
                }
            }
        }
        out.push_str("}\n");
    }
    out
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Node-count check for networks the artifact knows by name. `name` is
/// matched case-insensitively against the repository file stems.
pub fn validate_known_network(name: &str, doc: &BifDocument) -> Result<()> {
    let lower = name.to_ascii_lowercase();
    if let Some(&(known, expected)) = KNOWN_NODE_COUNTS
        .iter()
        .find(|(known, _)| *known == lower)
    {
        if doc.n() != expected {
            return Err(Error::NodeCount {
                name: known.to_string(),
                expected,
                got: doc.n(),
            });
        }
    }
    Ok(())
}
