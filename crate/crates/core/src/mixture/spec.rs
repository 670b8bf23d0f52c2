//! Mixture notation, ASCII form.
//!
//! ```text
//! spec      := term ("+" term)*
//! term      := "F" sizes "^" histories | "R" int | "L" int
//! sizes     := int ("," int)*
//! histories := int "-" int | int ("," int)*
//! ```
//!
//! `F200^2-5` expands to four FNNs of width 200 with histories 2, 3, 4, 5.
//! `F200,100^2,3` pairs sizes with histories. Whitespace around `+` is ignored.

use std::fmt;
use std::str::FromStr;

use crate::components::ComponentKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MixtureSpec {
    pub components: Vec<ComponentKind>,
}

impl MixtureSpec {
    pub fn new(components: Vec<ComponentKind>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture spec", "at least one component is required"));
        }
        for c in &components {
            c.validate()?;
        }
        Ok(Self { components })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Parser {
            src: text.as_bytes(),
            pos: 0,
        }
        .spec()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn has_recurrent(&self) -> bool {
        self.components.iter().any(|c| c.is_recurrent())
    }

    /// Canonical text: consecutive FNNs of equal width share one term; three or
    /// more consecutive ascending histories are written as a range.
    pub fn render(&self) -> String {
        let mut terms = Vec::new();
        let mut i = 0;
        while i < self.components.len() {
            match self.components[i] {
                ComponentKind::Fnn { hidden, .. } => {
                    let mut histories = Vec::new();
                    while let Some(&ComponentKind::Fnn { hidden: h, history }) = self.components.get(i) {
                        if h != hidden {
                            break;
                        }
                        histories.push(history);
                        i += 1;
                    }
                    terms.push(format!("F{hidden}^{}", render_histories(&histories)));
                }
                other => {
                    terms.push(other.to_string());
                    i += 1;
                }
            }
        }
        terms.join("+")
    }
}

fn render_histories(h: &[usize]) -> String {
    let consecutive = h.windows(2).all(|w| w[1] == w[0] + 1);
    if h.len() >= 3 && consecutive {
        format!("{}-{}", h[0], h[h.len() - 1])
    } else {
        h.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

impl fmt::Display for MixtureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for MixtureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            position: self.pos,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.src.get(self.pos).is_some_and(u8::is_ascii_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn int(&mut self) -> Result<usize> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return self.error("expected an integer");
        }
        let digits = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        digits.parse().or_else(|_| {
            self.pos = start;
            self.error("integer out of range")
        })
    }

    fn int_list(&mut self) -> Result<Vec<usize>> {
        let mut out = vec![self.int()?];
        while self.eat(b',') {
            out.push(self.int()?);
        }
        Ok(out)
    }

    fn spec(&mut self) -> Result<MixtureSpec> {
        let mut components = Vec::new();
        loop {
            self.skip_ws();
            self.term(&mut components)?;
            self.skip_ws();
            if self.pos == self.src.len() {
                break;
            }
            if !self.eat(b'+') {
                return self.error("expected '+' or end of input");
            }
        }
        MixtureSpec::new(components)
    }

    fn term(&mut self, out: &mut Vec<ComponentKind>) -> Result<()> {
        let start = self.pos;
        match self.peek() {
            Some(b'F') => {
                self.pos += 1;
                let sizes = self.int_list()?;
                if !self.eat(b'^') {
                    return self.error("expected '^' before FNN histories");
                }
                let hist_pos = self.pos;
                let first = self.int()?;
                let histories = if self.eat(b'-') {
                    let last = self.int()?;
                    if last < first {
                        self.pos = hist_pos;
                        return self.error(format!("empty history range {first}-{last}"));
                    }
                    (first..=last).collect()
                } else {
                    let mut h = vec![first];
                    while self.eat(b',') {
                        h.push(self.int()?);
                    }
                    h
                };
                let sizes = match sizes.len() {
                    1 => vec![sizes[0]; histories.len()],
                    n if n == histories.len() => sizes,
                    n => {
                        self.pos = start;
                        return self.error(format!("{n} sizes do not pair with {} histories", histories.len()));
                    }
                };
                for (hidden, history) in sizes.into_iter().zip(histories) {
                    let kind = ComponentKind::Fnn { hidden, history };
                    if let Err(e) = kind.validate() {
                        return match e {
                            Error::Invalid { message, .. } => {
                                self.pos = hist_pos;
                                self.error(message)
                            }
                            other => Err(other),
                        };
                    }
                    out.push(kind);
                }
            }
            Some(b'R') | Some(b'L') => {
                let recurrent = self.peek() == Some(b'R');
                self.pos += 1;
                let hidden = self.int()?;
                if hidden == 0 {
                    self.pos = start;
                    return self.error("hidden size must be >= 1");
                }
                out.push(if recurrent {
                    ComponentKind::Rnn { hidden }
                } else {
                    ComponentKind::Lstm { hidden }
                });
            }
            _ => return self.error("expected a term starting with F, R or L"),
        }
        Ok(())
    }
}
