use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use super::CodecError;

/// Largest arity whose digits stay clear of the framing sentinels.
const MAX_ARITY: u8 = 4;

/// Prefix-free map from characters to digit strings over `1..=arity`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    arity: u8,
    codes: BTreeMap<char, Vec<u8>>,
    trie: Vec<TrieNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct TrieNode {
    children: [Option<usize>; MAX_ARITY as usize],
    symbol: Option<char>,
}

impl Codebook {
    /// Validates and indexes a set of codes.
    pub fn new(arity: u8, codes: BTreeMap<char, Vec<u8>>) -> Result<Self, CodecError> {
        if !(2..=MAX_ARITY).contains(&arity) {
            return Err(CodecError::UnsupportedArity(u32::from(arity)));
        }
        if codes.is_empty() {
            return Err(CodecError::InvalidCodebook("no codes".into()));
        }
        let mut trie = vec![TrieNode::default()];
        for (&ch, code) in &codes {
            if code.is_empty() {
                return Err(CodecError::InvalidCodebook(format!("empty code for {ch:?}")));
            }
            let mut at = 0;
            for &digit in code {
                if !(1..=arity).contains(&digit) {
                    return Err(CodecError::InvalidCodebook(format!(
                        "digit {digit} of {ch:?} outside 1..={arity}"
                    )));
                }
                if trie[at].symbol.is_some() {
                    return Err(CodecError::InvalidCodebook(format!(
                        "code of {:?} is a prefix of the code of {ch:?}",
                        trie[at].symbol.unwrap()
                    )));
                }
                let slot = usize::from(digit - 1);
                at = match trie[at].children[slot] {
                    Some(next) => next,
                    None => {
                        trie.push(TrieNode::default());
                        let next = trie.len() - 1;
                        trie[at].children[slot] = Some(next);
                        next
                    }
                };
            }
            if trie[at].symbol.is_some() || trie[at].children.iter().any(Option::is_some) {
                return Err(CodecError::InvalidCodebook(format!(
                    "code of {ch:?} collides with or prefixes another code"
                )));
            }
            trie[at].symbol = Some(ch);
        }
        Ok(Codebook { arity, codes, trie })
    }

    /// The 22-symbol quaternary codebook used for the reference command.
    pub fn quaternary() -> Self {
        const TABLE: [(char, &str); 22] = [
            ('s', "234"),
            ('n', "233"),
            ('o', "232"),
            ('h', "231"),
            ('d', "224"),
            ('g', "223"),
            ('c', "222"),
            ('9', "221"),
            ('6', "214"),
            ('2', "213"),
            ('3', "212"),
            ('u', "211"),
            ('p', "144"),
            ('i', "143"),
            ('8', "142"),
            ('0', "141"),
            ('.', "24"),
            ('1', "12"),
            ('-', "13"),
            ('E', "4"),
            (' ', "11"),
            ('S', "3"),
        ];
        let codes = TABLE
            .iter()
            .map(|&(c, s)| (c, s.bytes().map(|b| b - b'0').collect()))
            .collect();
        Codebook::new(4, codes).expect("shipped codebook is valid")
    }

    pub fn arity(&self) -> u8 {
        self.arity
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, ch: char) -> Option<&[u8]> {
        self.codes.get(&ch).map(Vec::as_slice)
    }

    pub fn codes(&self) -> &BTreeMap<char, Vec<u8>> {
        &self.codes
    }

    /// Weighted mean code length (digits per symbol).
    pub fn expected_length(&self, weights: &BTreeMap<char, u64>) -> f64 {
        let total: u64 = weights.values().sum();
        if total == 0 {
            return 0.0;
        }
        let weighted: u64 = weights
            .iter()
            .filter_map(|(c, &w)| self.codes.get(c).map(|code| w * code.len() as u64))
            .sum();
        weighted as f64 / total as f64
    }

    /// Greedy prefix-tree walk over a digit stream.
    pub(crate) fn decode_digits(&self, digits: &[u64]) -> Result<String, CodecError> {
        let mut out = String::new();
        let mut at = 0;
        let mut partial = String::new();
        for &amount in digits {
            if !(1..=u64::from(self.arity)).contains(&amount) {
                return Err(CodecError::DigitOutOfRange { amount, arity: self.arity });
            }
            partial.push(char::from(b'0' + amount as u8));
            match self.trie[at].children[(amount - 1) as usize] {
                Some(next) => at = next,
                None => return Err(CodecError::InvalidCode(partial)),
            }
            if let Some(ch) = self.trie[at].symbol {
                out.push(ch);
                at = 0;
                partial.clear();
            }
        }
        if partial.is_empty() {
            Ok(out)
        } else {
            Err(CodecError::IncompleteCode(partial))
        }
    }

    /// Parses `<codepoint> <digit-string>` lines. Blank lines and `#`
    /// comments are skipped; the arity is the largest digit used (min 2).
    pub fn parse(text: &str) -> Result<Self, CodecError> {
        let mut codes = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (ch, rest) = parse_codepoint_field(content, line)?;
            let digits: Vec<u8> = rest
                .bytes()
                .map(|b| match b {
                    b'1'..=b'9' => Ok(b - b'0'),
                    _ => Err(CodecError::Parse {
                        line,
                        msg: format!("bad digit string {rest:?}"),
                    }),
                })
                .collect::<Result<_, _>>()?;
            if digits.is_empty() {
                return Err(CodecError::Parse { line, msg: "missing digit string".into() });
            }
            if codes.insert(ch, digits).is_some() {
                return Err(CodecError::Parse { line, msg: format!("duplicate symbol {ch:?}") });
            }
        }
        let arity = codes
            .values()
            .flat_map(|c| c.iter().copied())
            .max()
            .unwrap_or(2)
            .max(2);
        Codebook::new(arity, codes)
    }

    /// Renders the codebook in the `<codepoint> <digit-string>` file format.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (ch, code) in &self.codes {
            out.push_str(&u32::from(*ch).to_string());
            out.push(' ');
            out.extend(code.iter().map(|&d| char::from(b'0' + d)));
            out.push('\n');
        }
        out
    }
}

/// Parses `<codepoint> <weight>` lines into a frequency table.
pub fn parse_frequency_table(text: &str) -> Result<BTreeMap<char, u64>, CodecError> {
    let mut table = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (ch, rest) = parse_codepoint_field(content, line)?;
        let weight: u64 = rest.parse().map_err(|_| CodecError::Parse {
            line,
            msg: format!("bad weight {rest:?}"),
        })?;
        if table.insert(ch, weight).is_some() {
            return Err(CodecError::Parse { line, msg: format!("duplicate symbol {ch:?}") });
        }
    }
    Ok(table)
}

/// Character frequencies of a text, usable as a frequency table.
pub fn frequencies(text: &str) -> BTreeMap<char, u64> {
    let mut table = BTreeMap::new();
    for c in text.chars() {
        *table.entry(c).or_insert(0) += 1;
    }
    table
}

fn parse_codepoint_field(content: &str, line: usize) -> Result<(char, &str), CodecError> {
    let mut parts = content.split_whitespace();
    let cp = parts.next().unwrap_or_default();
    let rest = parts.next().ok_or(CodecError::Parse {
        line,
        msg: "expected two fields".into(),
    })?;
    if parts.next().is_some() {
        return Err(CodecError::Parse { line, msg: "expected two fields".into() });
    }
    let ch = cp
        .parse::<u32>()
        .ok()
        .and_then(char::from_u32)
        .ok_or_else(|| CodecError::Parse { line, msg: format!("bad codepoint {cp:?}") })?;
    Ok((ch, rest))
}

/// True iff no code is a prefix of another (pairwise scan).
pub fn verify_prefix_free(codebook: &Codebook) -> bool {
    let codes: Vec<&Vec<u8>> = codebook.codes.values().collect();
    codes.iter().enumerate().all(|(i, a)| {
        codes
            .iter()
            .enumerate()
            .all(|(j, b)| i == j || !b.starts_with(a))
    })
}

struct BuildNode {
    weight: u64,
    order: usize,
    symbol: Option<char>,
    children: Vec<usize>,
}

/// n-ary Huffman construction.
///
/// The leaf set is padded with zero-weight dummies until
/// `(leaves - 1) % (arity - 1) == 0`, so every merge takes exactly `arity`
/// nodes. Equal weights are ordered dummies first, then by character code,
/// then by creation order of internal nodes. Within a merge, heavier
/// children get smaller digits, which minimises the satoshi cost of the
/// code without changing its lengths.
pub fn build_codebook(weights: &BTreeMap<char, u64>, arity: u32) -> Result<Codebook, CodecError> {
    if !(2..=u32::from(MAX_ARITY)).contains(&arity) {
        return Err(CodecError::UnsupportedArity(arity));
    }
    if weights.values().all(|&w| w == 0) {
        return Err(CodecError::EmptyFrequencyTable);
    }
    let arity_u8 = arity as u8;
    if weights.len() == 1 {
        let (&ch, _) = weights.iter().next().unwrap();
        return Codebook::new(arity_u8, BTreeMap::from([(ch, vec![1])]));
    }

    let n = weights.len();
    let step = arity as usize - 1;
    let dummies = (step - (n - 1) % step) % step;

    let mut nodes: Vec<BuildNode> = Vec::new();
    for i in 0..dummies {
        nodes.push(BuildNode { weight: 0, order: i, symbol: None, children: vec![] });
    }
    for (i, (&ch, &w)) in weights.iter().enumerate() {
        nodes.push(BuildNode { weight: w, order: dummies + i, symbol: Some(ch), children: vec![] });
    }
    let mut heap: BinaryHeap<Reverse<(u64, usize, usize)>> = nodes
        .iter()
        .enumerate()
        .map(|(idx, nd)| Reverse((nd.weight, nd.order, idx)))
        .collect();

    while heap.len() > 1 {
        let mut merged = Vec::with_capacity(arity as usize);
        for _ in 0..arity {
            let Reverse((_, _, idx)) = heap.pop().expect("padding keeps merges full");
            merged.push(idx);
        }
        let weight = merged.iter().map(|&i| nodes[i].weight).sum();
        let order = nodes.len();
        nodes.push(BuildNode { weight, order, symbol: None, children: merged });
        heap.push(Reverse((weight, order, nodes.len() - 1)));
    }

    let Reverse((_, _, root)) = heap.pop().unwrap();
    let mut codes = BTreeMap::new();
    let mut stack = vec![(root, Vec::new())];
    while let Some((idx, prefix)) = stack.pop() {
        let node = &nodes[idx];
        if let Some(ch) = node.symbol {
            codes.insert(ch, prefix);
            continue;
        }
        let mut kids = node.children.clone();
        kids.sort_by_key(|&k| (Reverse(nodes[k].weight), is_dummy(&nodes[k]), nodes[k].order));
        for (digit, kid) in kids.into_iter().enumerate() {
            let mut code = prefix.clone();
            code.push(digit as u8 + 1);
            stack.push((kid, code));
        }
    }
    Codebook::new(arity_u8, codes)
}

fn is_dummy(node: &BuildNode) -> bool {
    node.symbol.is_none() && node.children.is_empty()
}
