//! Minimal inline markup scanner for DYK bullets and article bodies.
//!
//! Handles the subset of MediaWiki markup (and its rendered HTML) that shows
//! up in "Did You Know" archives: bold/italic quote runs, `<b>`/`<strong>`,
//! wiki links, `<a>` anchors, references, comments and templates. Templates
//! are not rendered; a handful of inline wrappers keep their content and the
//! rest are dropped.

use std::ops::Range;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MarkupError {
    #[error("unbalanced bold markup")]
    UnbalancedBold,
    #[error("unterminated {0}")]
    Unterminated(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub target: String,
    /// Byte range of the anchor text inside [`Inline::text`].
    pub span: Range<usize>,
}

/// Plain text with the positions of bold spans and links.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Inline {
    pub text: String,
    pub bold: Vec<Range<usize>>,
    pub links: Vec<Link>,
}

impl Inline {
    pub fn bold_text(&self, i: usize) -> Option<&str> {
        self.bold.get(i).map(|r| &self.text[r.clone()])
    }
}

/// Templates whose last positional argument is inline text.
const PASSTHROUGH_TEMPLATES: &[&str] = &[
    "nowrap", "nobr", "lang", "transl", "sic", "em", "strong", "small", "smaller", "big",
    "nobold", "noitalic", "script", "abbr", "nowiki", "keep together", "avoid wrap",
];

/// Strip references, comments and templates, leaving wiki/HTML inline markup.
pub fn expand_templates(src: &str) -> Result<String, MarkupError> {
    let src = strip_comments(src)?;
    let src = strip_refs(&src)?;
    let mut out = String::with_capacity(src.len());
    let mut rest = src.as_str();
    while let Some(pos) = rest.find("{{") {
        out.push_str(&rest[..pos]);
        let after = &rest[pos + 2..];
        let end = find_closing(after, "{{", "}}").ok_or(MarkupError::Unterminated("template"))?;
        out.push_str(&expand_one(&after[..end])?);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

fn expand_one(body: &str) -> Result<String, MarkupError> {
    let args = split_top_level(body, '|');
    let name = args[0].trim().to_ascii_lowercase();
    let positional: Vec<&str> = args[1..]
        .iter()
        .copied()
        .filter(|a| !is_named_arg(a))
        .collect();
    let chosen = match name.as_str() {
        "'" => return Ok("'".to_string()),
        "\"" => return Ok("\"".to_string()),
        "snd" | "spaced ndash" => return Ok(" – ".to_string()),
        "ndash" => return Ok("–".to_string()),
        "mdash" => return Ok("—".to_string()),
        "nbsp" => return Ok(" ".to_string()),
        "ill" | "interlanguage link" => positional.first().map(|s| format!("[[{}]]", s.trim())),
        "convert" | "cvt" => {
            let value = positional.first().map(|s| s.trim()).unwrap_or("");
            let unit = positional.get(1).map(|s| s.trim()).unwrap_or("");
            Some(format!("{value} {unit}").trim().to_string())
        }
        n if PASSTHROUGH_TEMPLATES.contains(&n) => positional.last().map(|s| s.to_string()),
        _ => None,
    };
    match chosen {
        Some(inner) => expand_templates(&inner),
        None => Ok(String::new()),
    }
}

fn is_named_arg(arg: &str) -> bool {
    match arg.find('=') {
        Some(eq) => {
            let key = &arg[..eq];
            !key.is_empty() && !key.contains("[[") && !key.contains('\'')
        }
        None => false,
    }
}

/// Split on `sep` outside `[[...]]` and `{{...}}`.
fn split_top_level(s: &str, sep: char) -> Vec<&str> {
    let bytes = s.as_bytes();
    let mut parts = Vec::new();
    let (mut depth_link, mut depth_tpl) = (0usize, 0usize);
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i..].starts_with(b"[[") {
            depth_link += 1;
            i += 2;
            continue;
        }
        if bytes[i..].starts_with(b"]]") && depth_link > 0 {
            depth_link -= 1;
            i += 2;
            continue;
        }
        if bytes[i..].starts_with(b"{{") {
            depth_tpl += 1;
            i += 2;
            continue;
        }
        if bytes[i..].starts_with(b"}}") && depth_tpl > 0 {
            depth_tpl -= 1;
            i += 2;
            continue;
        }
        if bytes[i] == sep as u8 && depth_link == 0 && depth_tpl == 0 {
            parts.push(&s[start..i]);
            start = i + 1;
        }
        i += 1;
    }
    parts.push(&s[start..]);
    parts
}

/// Offset of the `close` matching an already consumed `open`, honouring nesting.
fn find_closing(s: &str, open: &str, close: &str) -> Option<usize> {
    let mut depth = 1usize;
    let mut i = 0;
    while i < s.len() {
        if s[i..].starts_with(open) {
            depth += 1;
            i += open.len();
        } else if s[i..].starts_with(close) {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
            i += close.len();
        } else {
            i += s[i..].chars().next().map_or(1, char::len_utf8);
        }
    }
    None
}

fn strip_comments(s: &str) -> Result<String, MarkupError> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find("<!--") {
        out.push_str(&rest[..pos]);
        let end = rest[pos..]
            .find("-->")
            .ok_or(MarkupError::Unterminated("comment"))?;
        rest = &rest[pos + end + 3..];
    }
    out.push_str(rest);
    Ok(out)
}

fn strip_refs(s: &str) -> Result<String, MarkupError> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    loop {
        let lower = rest.to_ascii_lowercase();
        let Some(pos) = lower.find("<ref") else { break };
        // `<references/>` and friends are not citations.
        let next = lower.as_bytes().get(pos + 4).copied();
        if !matches!(next, Some(b'>') | Some(b' ') | Some(b'/')) {
            out.push_str(&rest[..pos + 4]);
            rest = &rest[pos + 4..];
            continue;
        }
        out.push_str(&rest[..pos]);
        let tag_end = lower[pos..]
            .find('>')
            .ok_or(MarkupError::Unterminated("ref tag"))?
            + pos;
        if lower[..tag_end].ends_with('/') {
            rest = &rest[tag_end + 1..];
            continue;
        }
        let close = lower[tag_end..]
            .find("</ref>")
            .ok_or(MarkupError::Unterminated("ref"))?
            + tag_end;
        rest = &rest[close + "</ref>".len()..];
    }
    out.push_str(rest);
    Ok(out)
}

struct Builder {
    out: Inline,
    bold_start: Option<usize>,
    html_bold_depth: usize,
}

impl Builder {
    fn new() -> Self {
        Self {
            out: Inline::default(),
            bold_start: None,
            html_bold_depth: 0,
        }
    }

    fn push_str(&mut self, s: &str) {
        for c in s.chars() {
            self.push(c);
        }
    }

    fn push(&mut self, c: char) {
        if c.is_whitespace() {
            if !self.out.text.is_empty() && !self.out.text.ends_with(' ') {
                self.out.text.push(' ');
            }
        } else {
            self.out.text.push(c);
        }
    }

    fn pos(&self) -> usize {
        self.out.text.len()
    }

    fn toggle_bold(&mut self) {
        match self.bold_start.take() {
            Some(start) => self.close_bold(start),
            None => self.bold_start = Some(self.pos()),
        }
    }

    fn close_bold(&mut self, start: usize) {
        let end = self.pos();
        if end > start {
            self.out.bold.push(start..end);
        }
    }

    fn finish(mut self, strict: bool) -> Result<Inline, MarkupError> {
        if self.bold_start.is_some() || self.html_bold_depth > 0 {
            if strict {
                return Err(MarkupError::UnbalancedBold);
            }
            self.bold_start = None;
        }
        // Trim surrounding whitespace and shrink spans that touch it.
        let lead = self.out.text.len() - self.out.text.trim_start().len();
        let text = self.out.text.trim().to_string();
        let len = text.len();
        let fix = |r: &Range<usize>| -> Range<usize> {
            let mut s = r.start.saturating_sub(lead).min(len);
            let mut e = r.end.saturating_sub(lead).min(len);
            while s < e && text.as_bytes()[s] == b' ' {
                s += 1;
            }
            while e > s && text.as_bytes()[e - 1] == b' ' {
                e -= 1;
            }
            s..e
        };
        let bold = self
            .out
            .bold
            .iter()
            .map(fix)
            .filter(|r| !r.is_empty())
            .collect();
        let links = self
            .out
            .links
            .iter()
            .map(|l| Link {
                target: l.target.clone(),
                span: fix(&l.span),
            })
            .collect();
        Ok(Inline { text, bold, links })
    }
}

/// Scan one line of inline markup (templates already expanded).
///
/// In strict mode unbalanced bold markers are an error; otherwise they are
/// dropped.
pub fn scan_inline(src: &str, strict: bool) -> Result<Inline, MarkupError> {
    let mut b = Builder::new();
    let mut i = 0;
    let bytes = src.as_bytes();
    while i < src.len() {
        let rest = &src[i..];
        if bytes[i] == b'\'' {
            let run = rest.bytes().take_while(|&c| c == b'\'').count();
            match run {
                1 => b.push('\''),
                2 => {}
                3 => b.toggle_bold(),
                4 => {
                    b.push('\'');
                    b.toggle_bold();
                }
                _ => {
                    for _ in 0..run - 5 {
                        b.push('\'');
                    }
                    b.toggle_bold();
                }
            }
            i += run;
            continue;
        }
        if let Some(after) = rest.strip_prefix("[[") {
            let inner_len = find_closing(after, "[[", "]]").ok_or(MarkupError::Unterminated("wiki link"))?;
            let inner = &after[..inner_len];
            i += 2 + inner_len + 2;
            let parts = split_top_level(inner, '|');
            let target = parts[0].trim();
            let lower = target.to_ascii_lowercase();
            if lower.starts_with("file:") || lower.starts_with("image:") || lower.starts_with("category:") {
                continue;
            }
            let anchor_src = if parts.len() > 1 {
                parts[parts.len() - 1]
            } else {
                target.trim_start_matches(':')
            };
            // Anchors may carry their own quote markup, e.g. [[X|'''X''']].
            let start = b.pos();
            let mut j = 0;
            let ab = anchor_src.as_bytes();
            while j < anchor_src.len() {
                if ab[j] == b'\'' {
                    let run = anchor_src[j..].bytes().take_while(|&c| c == b'\'').count();
                    match run {
                        1 => b.push('\''),
                        3 | 5 => b.toggle_bold(),
                        _ => {}
                    }
                    j += run;
                } else {
                    let c = anchor_src[j..].chars().next().unwrap_or(' ');
                    b.push(c);
                    j += c.len_utf8();
                }
            }
            // Link trail: [[bus]]es renders as "buses".
            let trail: String = src[i..].chars().take_while(|c| c.is_alphabetic()).collect();
            b.push_str(&trail);
            i += trail.len();
            let end = b.pos();
            b.out.links.push(Link {
                target: normalize_title(target),
                span: start..end,
            });
            continue;
        }
        if bytes[i] == b'[' {
            // External link: [http://x label] keeps the label.
            if let Some(close) = rest.find(']') {
                let inner = &rest[1..close];
                if inner.starts_with("http://") || inner.starts_with("https://") || inner.starts_with("//") {
                    if let Some(sp) = inner.find(' ') {
                        b.push_str(&inner[sp + 1..]);
                    }
                    i += close + 1;
                    continue;
                }
            }
        }
        if bytes[i] == b'<' {
            if let Some(close) = rest.find('>') {
                let tag = &rest[1..close];
                let handled = handle_tag(&mut b, tag, &src[i + close + 1..]);
                if let Some(consumed) = handled {
                    i += close + 1 + consumed;
                    continue;
                }
            }
        }
        if bytes[i] == b'&' {
            if let Some((decoded, len)) = decode_entity(rest) {
                b.push(decoded);
                i += len;
                continue;
            }
        }
        let c = rest.chars().next().unwrap_or(' ');
        b.push(c);
        i += c.len_utf8();
    }
    b.finish(strict)
}

/// Returns the number of bytes consumed after the tag, or `None` if the text
/// is not a recognised tag and should be emitted literally.
fn handle_tag(b: &mut Builder, tag: &str, after: &str) -> Option<usize> {
    let lower = tag.trim().to_ascii_lowercase();
    let (closing, body) = match lower.strip_prefix('/') {
        Some(rest) => (true, rest.trim().to_string()),
        None => (false, lower.trim_end_matches('/').trim().to_string()),
    };
    let name: String = body.chars().take_while(|c| c.is_ascii_alphanumeric()).collect();
    if name.is_empty() {
        return None;
    }
    match name.as_str() {
        "b" | "strong" => {
            if closing {
                if b.html_bold_depth > 0 {
                    b.html_bold_depth -= 1;
                    if b.html_bold_depth == 0 {
                        if let Some(start) = b.bold_start.take() {
                            b.close_bold(start);
                        }
                    }
                }
            } else {
                if b.html_bold_depth == 0 && b.bold_start.is_none() {
                    b.bold_start = Some(b.pos());
                }
                b.html_bold_depth += 1;
            }
            Some(0)
        }
        "a" if !closing => {
            let original = tag.trim();
            let target = attr(original, "title")
                .or_else(|| attr(original, "href").map(|h| href_title(&h)))
                .unwrap_or_default();
            let lower_after = after.to_ascii_lowercase();
            let end = lower_after.find("</a>").unwrap_or(after.len());
            let anchor = &after[..end];
            let inner = scan_inline(anchor, false).ok()?;
            let start = b.pos();
            for c in inner.text.chars() {
                b.push(c);
            }
            for r in inner.bold {
                b.out.bold.push(start + r.start..start + r.end);
            }
            let stop = b.pos();
            if !target.is_empty() {
                b.out.links.push(Link {
                    target: normalize_title(&target),
                    span: start..stop,
                });
            }
            let consumed = if end < after.len() { end + 4 } else { end };
            Some(consumed)
        }
        "br" => {
            b.push(' ');
            Some(0)
        }
        "i" | "em" | "span" | "a" | "sup" | "sub" | "small" | "abbr" | "li" | "ul" | "p"
        | "div" | "u" | "s" | "cite" | "q" | "code" | "bdi" => Some(0),
        _ => None,
    }
}

fn attr(tag: &str, name: &str) -> Option<String> {
    let lower = tag.to_ascii_lowercase();
    let mut from = 0;
    while let Some(pos) = lower[from..].find(name) {
        let at = from + pos;
        let before_ok = at == 0 || lower.as_bytes()[at - 1].is_ascii_whitespace();
        let rest = tag[at + name.len()..].trim_start();
        if before_ok {
            if let Some(rest) = rest.strip_prefix('=') {
                let rest = rest.trim_start();
                let quote = rest.chars().next()?;
                if quote == '"' || quote == '\'' {
                    let end = rest[1..].find(quote)?;
                    return Some(decode_entities(&rest[1..1 + end]));
                }
                let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
                return Some(rest[..end].to_string());
            }
        }
        from = at + name.len();
    }
    None
}

fn href_title(href: &str) -> String {
    let path = href.rsplit("/wiki/").next().unwrap_or(href);
    percent_decode(path)
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            let hex = std::str::from_utf8(&bytes[i + 1..i + 3]).unwrap_or("");
            if let Ok(v) = u8::from_str_radix(hex, 16) {
                out.push(v);
                i += 3;
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

/// Canonical article title: underscores to spaces, no section anchor,
/// first letter upper-cased.
pub fn normalize_title(raw: &str) -> String {
    let raw = raw.trim().trim_start_matches(':');
    let raw = raw.split('#').next().unwrap_or(raw);
    let spaced: String = raw.replace('_', " ");
    let collapsed = spaced.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut chars = collapsed.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn decode_entity(s: &str) -> Option<(char, usize)> {
    let end = s.find(';')?;
    if end > 10 {
        return None;
    }
    let name = &s[1..end];
    let c = match name {
        "amp" => '&',
        "quot" => '"',
        "apos" => '\'',
        "lt" => '<',
        "gt" => '>',
        "nbsp" => ' ',
        "ndash" => '–',
        "mdash" => '—',
        "hellip" => '…',
        _ => {
            let num = name.strip_prefix('#')?;
            let code = match num.strip_prefix(['x', 'X']) {
                Some(hex) => u32::from_str_radix(hex, 16).ok()?,
                None => num.parse().ok()?,
            };
            char::from_u32(code)?
        }
    };
    Some((c, end + 1))
}

pub fn decode_entities(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < s.len() {
        if s.as_bytes()[i] == b'&' {
            if let Some((c, len)) = decode_entity(&s[i..]) {
                out.push(c);
                i += len;
                continue;
            }
        }
        let c = s[i..].chars().next().unwrap_or(' ');
        out.push(c);
        i += c.len_utf8();
    }
    out
}

/// Clean an article's wikitext into plain paragraphs separated by newlines.
///
/// Tables, headings markup, file links, lists markers and templates are
/// removed. Never fails: malformed fragments degrade to literal text.
pub fn clean_article(src: &str) -> String {
    let expanded = expand_templates(src).unwrap_or_else(|_| src.to_string());
    let mut paragraphs = Vec::new();
    let mut in_table = 0usize;
    for line in expanded.lines() {
        let t = line.trim();
        if t.starts_with("{|") {
            in_table += 1;
            continue;
        }
        if in_table > 0 {
            if t.starts_with("|}") {
                in_table -= 1;
            }
            continue;
        }
        if t.is_empty() || t.starts_with("__") {
            continue;
        }
        let t = if t.starts_with('=') && t.ends_with('=') {
            t.trim_matches('=').trim()
        } else {
            t.trim_start_matches(['*', '#', ':', ';']).trim()
        };
        let text = match scan_inline(t, false) {
            Ok(inline) => inline.text,
            Err(_) => t.to_string(),
        };
        if !text.is_empty() {
            paragraphs.push(text);
        }
    }
    paragraphs.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan(s: &str) -> Inline {
        scan_inline(&expand_templates(s).unwrap(), true).unwrap()
    }

    #[test]
    fn bold_link_span() {
        let i = scan("... that '''[[Margrit Waltz]]''' has ferried planes?");
        assert_eq!(i.text, "... that Margrit Waltz has ferried planes?");
        assert_eq!(i.bold_text(0), Some("Margrit Waltz"));
        assert_eq!(i.links[0].target, "Margrit Waltz");
        assert_eq!(&i.text[i.links[0].span.clone()], "Margrit Waltz");
    }

    #[test]
    fn piped_link_and_italics() {
        let i = scan("that ''[[Gold Digger (song)|Gold Digger]]'' is '''[[Kanye_West|West's]]''' song");
        assert_eq!(i.text, "that Gold Digger is West's song");
        assert_eq!(i.links[0].target, "Gold Digger (song)");
        assert_eq!(i.links[1].target, "Kanye West");
        assert_eq!(i.bold_text(0), Some("West's"));
    }

    #[test]
    fn bold_inside_anchor() {
        let i = scan("that [[Foo|'''Foo''']] was here");
        assert_eq!(i.bold_text(0), Some("Foo"));
    }

    #[test]
    fn html_rendering() {
        let i = scan(
            r#"... that <b><a href="/wiki/Margrit_Waltz" title="Margrit Waltz">Margrit Waltz</a></b> has ferried planes &amp; more?"#,
        );
        assert_eq!(i.text, "... that Margrit Waltz has ferried planes & more?");
        assert_eq!(i.bold_text(0), Some("Margrit Waltz"));
        assert_eq!(i.links[0].target, "Margrit Waltz");
    }

    #[test]
    fn href_only_anchor() {
        let i = scan(r#"see <a href="/wiki/Caf%C3%A9_Tacuba">the band</a>"#);
        assert_eq!(i.links[0].target, "Café Tacuba");
        assert_eq!(i.text, "see the band");
    }

    #[test]
    fn templates_and_refs() {
        let i = scan("that {{nowrap|'''5 km'''}} long<ref name=x>cite</ref> road {{cn}} exists{{-?}}");
        assert_eq!(i.text, "that 5 km long road exists");
        assert_eq!(i.bold_text(0), Some("5 km"));
        let i = scan("ran {{convert|10|km|mi}} today<ref name=\"a\"/>");
        assert_eq!(i.text, "ran 10 km today");
    }

    #[test]
    fn unbalanced_bold_is_error_in_strict_mode() {
        let src = expand_templates("that '''Foo was here").unwrap();
        assert_eq!(scan_inline(&src, true), Err(MarkupError::UnbalancedBold));
        assert_eq!(scan_inline(&src, false).unwrap().text, "that Foo was here");
        let src = "that <b>Foo was here";
        assert_eq!(scan_inline(src, true), Err(MarkupError::UnbalancedBold));
    }

    #[test]
    fn unterminated_template_is_error() {
        assert!(expand_templates("that {{nowrap|x").is_err());
    }

    #[test]
    fn whitespace_collapses() {
        let i = scan("  a   '''b'''\t c  ");
        assert_eq!(i.text, "a b c");
        assert_eq!(i.bold_text(0), Some("b"));
    }

    #[test]
    fn title_normalization() {
        assert_eq!(normalize_title("kanye_West#Career"), "Kanye West");
        assert_eq!(normalize_title(":Category:Foo"), "Category:Foo");
    }

    #[test]
    fn article_cleaning() {
        let src = "{{Infobox person|name=X}}\n'''Margrit Waltz''' is a [[pilot|ferry pilot]].<ref>x</ref>\n== Career ==\n{|\n| a || b\n|}\n* She flew [[File:x.jpg|thumb|pic]]far.";
        assert_eq!(
            clean_article(src),
            "Margrit Waltz is a ferry pilot.\nCareer\nShe flew far."
        );
    }
}
