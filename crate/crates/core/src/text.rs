//! String helpers shared by rendering, parsing and grounding.

/// Canonical form used for title matching: surrounding quotes stripped,
/// trimmed, lower-cased, internal whitespace runs collapsed to one space.
pub fn normalize(s: &str) -> String {
    let trimmed = strip_quotes(s.trim());
    let mut out = String::with_capacity(trimmed.len());
    for word in trimmed.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for c in word.chars() {
            out.extend(c.to_lowercase());
        }
    }
    out
}

fn strip_quotes(s: &str) -> &str {
    let mut s = s;
    loop {
        let t = s.trim();
        let stripped = [('"', '"'), ('\'', '\''), ('\u{201c}', '\u{201d}')]
            .iter()
            .find_map(|&(open, close)| {
                let inner = t.strip_prefix(open)?.strip_suffix(close)?;
                Some(inner)
            });
        match stripped {
            Some(inner) => s = inner,
            None => return t,
        }
    }
}

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - edit_distance / max_len`, in `[0, 1]`. Two empty strings are identical.
pub fn similarity(a: &str, b: &str) -> f64 {
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - edit_distance(a, b) as f64 / max_len as f64
}

/// Wraps `s` in `quote`, doubling any embedded quote characters.
pub fn quote(s: &str, quote: char) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        if c == quote {
            out.push(quote);
        }
        out.push(c);
    }
    out.push(quote);
    out
}

/// Extracts every quoted segment of `text` in order.
///
/// `quote` delimits segments and is escaped by doubling inside them;
/// typographic `“…”` pairs are accepted as well. An unterminated segment
/// runs to the end of the text.
pub fn parse_quoted(text: &str, quote: char) -> Vec<String> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == quote {
            let mut seg = String::new();
            loop {
                match chars.next() {
                    Some(ch) if ch == quote => {
                        if chars.peek() == Some(&quote) {
                            chars.next();
                            seg.push(quote);
                        } else {
                            break;
                        }
                    }
                    Some(ch) => seg.push(ch),
                    None => break,
                }
            }
            out.push(seg);
        } else if c == '\u{201c}' {
            let mut seg = String::new();
            for ch in chars.by_ref() {
                if ch == '\u{201d}' {
                    break;
                }
                seg.push(ch);
            }
            out.push(seg);
        }
    }
    out
}

/// Stable 64-bit FNV-1a, used to derive per-key seeds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
