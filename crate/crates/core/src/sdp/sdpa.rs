//! SDPA sparse input (`.dat-s`) and SDPA-style solution files.
//!
//! Our primal is SDPA's dual problem: `max F0.Y s.t. Fi.Y = ci, Y PSD`,
//! so `Y` is our `X`, `F0 = C`, `Fi = A_i`, `ci = b_i` and SDPA's `x`
//! vector is our `y`. Free variables are split as `x_f = x+ - x-` into one
//! trailing diagonal (LP) block.

use std::fmt::Write as _;

use faer::Mat;

use super::{ConicSolution, Entry, LinearForm, SdpError, SdpProblem, SolveStatus};

fn fmt_num(v: f64) -> String {
    format!("{v:e}")
}

/// Maps our non-empty blocks to SDPA block numbers (1-based).
fn block_map(problem: &SdpProblem) -> (Vec<Option<usize>>, usize) {
    let mut map = Vec::with_capacity(problem.block_dims.len());
    let mut next = 1;
    for &n in &problem.block_dims {
        if n > 0 {
            map.push(Some(next));
            next += 1;
        } else {
            map.push(None);
        }
    }
    (map, next - 1)
}

pub fn write_sdpa(problem: &SdpProblem) -> String {
    let (map, nsdp) = block_map(problem);
    let lp_block = if problem.num_free > 0 { Some(nsdp + 1) } else { None };
    let nblocks = nsdp + usize::from(lp_block.is_some());
    let mut out = String::new();
    writeln!(out, "\"exported block SDP: {} rows, {} free variables\"", problem.rows.len(), problem.num_free).unwrap();
    writeln!(out, "{}", problem.rows.len()).unwrap();
    writeln!(out, "{nblocks}").unwrap();
    let mut dims: Vec<String> = problem.block_dims.iter().filter(|&&n| n > 0).map(|n| n.to_string()).collect();
    if problem.num_free > 0 {
        dims.push(format!("-{}", 2 * problem.num_free));
    }
    writeln!(out, "{}", dims.join(" ")).unwrap();
    let rhs: Vec<String> = problem.rhs.iter().map(|v| fmt_num(*v)).collect();
    writeln!(out, "{}", rhs.join(" ")).unwrap();
    let forms = std::iter::once((0usize, &problem.objective))
        .chain(problem.rows.iter().enumerate().map(|(i, r)| (i + 1, r)));
    for (matno, form) in forms {
        let f = form.normalized();
        for e in &f.entries {
            let Some(blk) = map[e.block] else { continue };
            let v = if e.i == e.j { e.coef } else { 0.5 * e.coef };
            writeln!(out, "{matno} {blk} {} {} {}", e.i + 1, e.j + 1, fmt_num(v)).unwrap();
        }
        if let Some(lp) = lp_block {
            for (var, c) in &f.free {
                writeln!(out, "{matno} {lp} {} {} {}", 2 * var + 1, 2 * var + 1, fmt_num(*c)).unwrap();
                writeln!(out, "{matno} {lp} {} {} {}", 2 * var + 2, 2 * var + 2, fmt_num(-c)).unwrap();
            }
        }
    }
    out
}

fn sdpa_err(line: usize, message: impl Into<String>) -> SdpError {
    SdpError::Sdpa { line, message: message.into() }
}

/// Reads a `.dat-s` file. LP blocks become runs of 1x1 PSD blocks, so a
/// file written by [`write_sdpa`] reads back as an equivalent problem with
/// split free variables.
pub fn read_sdpa(text: &str) -> Result<SdpProblem, SdpError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('"') && !l.starts_with('*'));
    let clean = |l: &str| l.replace(['{', '}', '(', ')', ','], " ");
    let mut header_tokens: Vec<(usize, String)> = Vec::new();
    // m, nblocks, block sizes, rhs; tokens may span lines
    let mut need: Option<usize> = None;
    let mut last_line = 0;
    while need.is_none_or(|n| header_tokens.len() < n) {
        let Some((ln, l)) = lines.next() else {
            return Err(sdpa_err(last_line, "unexpected end of header"));
        };
        last_line = ln;
        for t in clean(l).split_whitespace() {
            header_tokens.push((ln, t.to_string()));
        }
        if need.is_none() && header_tokens.len() >= 2 {
            let m = parse_usize(&header_tokens[0])?;
            let nb = parse_usize(&header_tokens[1])?;
            need = Some(2 + nb + m);
        }
    }
    let m = parse_usize(&header_tokens[0])?;
    let nb = parse_usize(&header_tokens[1])?;
    let sizes: Vec<i64> = header_tokens[2..2 + nb]
        .iter()
        .map(|(ln, t)| t.parse::<i64>().map_err(|_| sdpa_err(*ln, format!("bad block size `{t}`"))))
        .collect::<Result<_, _>>()?;
    let rhs: Vec<f64> = header_tokens[2 + nb..2 + nb + m]
        .iter()
        .map(|(ln, t)| parse_f64(*ln, t))
        .collect::<Result<_, _>>()?;
    if header_tokens.len() > 2 + nb + m {
        return Err(sdpa_err(header_tokens[2 + nb + m].0, "trailing tokens after the objective vector"));
    }

    let mut problem = SdpProblem::new();
    // SDPA block -> (first internal block, is_lp)
    let mut layout = Vec::with_capacity(nb);
    for &s in &sizes {
        if s > 0 {
            layout.push((problem.add_block(s as usize), false, s as usize));
        } else if s < 0 {
            let first = problem.block_dims.len();
            for _ in 0..(-s) {
                problem.add_block(1);
            }
            layout.push((first, true, (-s) as usize));
        } else {
            return Err(sdpa_err(0, "zero block size"));
        }
    }
    let mut forms: Vec<LinearForm> = vec![LinearForm::default(); m + 1];
    for (ln, l) in lines {
        let toks: Vec<String> = clean(l).split_whitespace().map(str::to_string).collect();
        if toks.len() != 5 {
            return Err(sdpa_err(ln, "expected `matno block i j value`"));
        }
        let matno = parse_usize(&(ln, toks[0].clone()))?;
        let blk = parse_usize(&(ln, toks[1].clone()))?;
        let i = parse_usize(&(ln, toks[2].clone()))?;
        let j = parse_usize(&(ln, toks[3].clone()))?;
        let v = parse_f64(ln, &toks[4])?;
        if matno > m || blk == 0 || blk > nb || i == 0 || j == 0 {
            return Err(sdpa_err(ln, "index out of range"));
        }
        let (first, is_lp, size) = layout[blk - 1];
        if i > size || j > size {
            return Err(sdpa_err(ln, "entry outside block"));
        }
        let entry = if is_lp {
            if i != j {
                return Err(sdpa_err(ln, "off-diagonal entry in LP block"));
            }
            Entry::new(first + i - 1, 0, 0, v)
        } else {
            let coef = if i == j { v } else { 2.0 * v };
            Entry::new(first, i - 1, j - 1, coef)
        };
        forms[matno].entries.push(entry);
    }
    let mut forms = forms.into_iter();
    problem.objective = forms.next().unwrap().normalized();
    for (form, b) in forms.zip(rhs) {
        problem.add_row(form.normalized(), b);
    }
    Ok(problem)
}

fn parse_usize((ln, t): &(usize, String)) -> Result<usize, SdpError> {
    // SDPA writers sometimes emit integers as floats
    let v: f64 = t.parse().map_err(|_| sdpa_err(*ln, format!("expected an integer, got `{t}`")))?;
    if v < 0.0 || v.fract() != 0.0 {
        return Err(sdpa_err(*ln, format!("expected a nonnegative integer, got `{t}`")));
    }
    Ok(v as usize)
}

fn parse_f64(ln: usize, t: &str) -> Result<f64, SdpError> {
    t.parse::<f64>().map_err(|_| sdpa_err(ln, format!("bad number `{t}`")))
}

/// Solution in SDPA output convention, mapped back to our variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpaSolution {
    pub phase: String,
    pub status: SolveStatus,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub x: Vec<Mat<f64>>,
    pub x_free: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<Mat<f64>>,
}

fn phase_of(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Optimal => "pdOPT",
        SolveStatus::Feasible => "dFEAS",
        SolveStatus::PrimalInfeasible => "pFEAS_dINF",
        SolveStatus::DualInfeasible => "pINF_dFEAS",
        SolveStatus::Stalled => "noINFO",
    }
}

fn status_of(phase: &str) -> SolveStatus {
    match phase {
        "pdOPT" => SolveStatus::Optimal,
        "pFEAS_dINF" | "pUNBD" => SolveStatus::PrimalInfeasible,
        "pINF_dFEAS" | "dUNBD" => SolveStatus::DualInfeasible,
        "pdFEAS" | "dFEAS" => SolveStatus::Feasible,
        _ => SolveStatus::Stalled,
    }
}

fn write_block(out: &mut String, m: &Mat<f64>) {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let r: Vec<String> = (0..m.ncols()).map(|j| fmt_num(m[(i, j)])).collect();
            format!("{{{}}}", r.join(","))
        })
        .collect();
    writeln!(out, "{{ {} }}", rows.join(", ")).unwrap();
}

/// Writes `sol` in SDPA output convention: `xVec` = y, `xMat` = dual slack,
/// `yMat` = our primal blocks (plus the split free-variable LP block).
pub fn write_sdpa_solution(problem: &SdpProblem, sol: &ConicSolution) -> String {
    let mut out = String::new();
    writeln!(out, "phase.value = {}", phase_of(sol.status)).unwrap();
    writeln!(out, "objValPrimal = {}", fmt_num(sol.dual_objective)).unwrap();
    writeln!(out, "objValDual = {}", fmt_num(sol.primal_objective)).unwrap();
    let yv: Vec<String> = sol.y.iter().map(|v| fmt_num(*v)).collect();
    writeln!(out, "xVec = \n{{{}}}", yv.join(",")).unwrap();
    let lp = |vals: Vec<f64>| -> String {
        let v: Vec<String> = vals.iter().map(|v| fmt_num(*v)).collect();
        format!("{{{}}}", v.join(","))
    };
    for (name, blocks, free) in [
        ("xMat", &sol.s, problem.free_residual(&sol.y).iter().flat_map(|r| [*r, -*r]).collect::<Vec<_>>()),
        (
            "yMat",
            &sol.x,
            sol.x_free.iter().flat_map(|v| [v.max(0.0), (-v).max(0.0)]).collect::<Vec<_>>(),
        ),
    ] {
        writeln!(out, "{name} = \n{{").unwrap();
        for (b, &n) in blocks.iter().zip(&problem.block_dims) {
            if n > 0 {
                write_block(&mut out, b);
            }
        }
        if problem.num_free > 0 {
            writeln!(out, "{}", lp(free)).unwrap();
        }
        writeln!(out, "}}").unwrap();
    }
    out
}

#[derive(Debug)]
enum Tree {
    Num(f64),
    List(Vec<Tree>),
}

fn parse_tree(s: &str, pos: &mut usize, line: usize) -> Result<Tree, SdpError> {
    let b = s.as_bytes();
    let skip = |pos: &mut usize| {
        while *pos < b.len() && (b[*pos].is_ascii_whitespace() || b[*pos] == b',') {
            *pos += 1;
        }
    };
    skip(pos);
    if *pos >= b.len() {
        return Err(sdpa_err(line, "unexpected end of solution data"));
    }
    if b[*pos] == b'{' {
        *pos += 1;
        let mut items = Vec::new();
        loop {
            skip(pos);
            if *pos >= b.len() {
                return Err(sdpa_err(line, "unbalanced braces"));
            }
            if b[*pos] == b'}' {
                *pos += 1;
                return Ok(Tree::List(items));
            }
            items.push(parse_tree(s, pos, line)?);
        }
    }
    let start = *pos;
    while *pos < b.len() && !matches!(b[*pos], b'{' | b'}' | b',') && !b[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    parse_f64(line, &s[start..*pos]).map(Tree::Num)
}

fn tree_numbers(t: &Tree) -> Result<Vec<f64>, SdpError> {
    match t {
        Tree::List(items) => items
            .iter()
            .map(|i| match i {
                Tree::Num(v) => Ok(*v),
                Tree::List(_) => Err(sdpa_err(0, "expected a flat vector")),
            })
            .collect(),
        Tree::Num(v) => Ok(vec![*v]),
    }
}

/// Reads an SDPA-convention solution for `problem` (as written by
/// [`write_sdpa`], including the split free-variable block).
pub fn read_sdpa_solution(problem: &SdpProblem, text: &str) -> Result<SdpaSolution, SdpError> {
    let mut phase = None;
    let mut pobj = f64::NAN;
    let mut dobj = f64::NAN;
    let mut sections: Vec<(String, Tree)> = Vec::new();
    let mut pos = 0;
    let bytes = text.as_bytes();
    let line_at = |p: usize| text[..p].matches('\n').count() + 1;
    while pos < bytes.len() {
        let rest = &text[pos..];
        let Some(eq) = rest.find('=') else { break };
        let key = rest[..eq].trim().rsplit('\n').next().unwrap_or("").trim().to_string();
        pos += eq + 1;
        match key.as_str() {
            "phase.value" | "objValPrimal" | "objValDual" => {
                let end = text[pos..].find('\n').map_or(text.len(), |e| pos + e);
                let val = text[pos..end].trim();
                match key.as_str() {
                    "phase.value" => phase = Some(val.to_string()),
                    "objValPrimal" => dobj = parse_f64(line_at(pos), val)?,
                    _ => pobj = parse_f64(line_at(pos), val)?,
                }
                pos = end;
            }
            "xVec" | "xMat" | "yMat" => {
                let line = line_at(pos);
                let t = parse_tree(text, &mut pos, line)?;
                sections.push((key, t));
            }
            _ => {
                // unknown scalar key: skip its line
                pos = text[pos..].find('\n').map_or(text.len(), |e| pos + e);
            }
        }
    }
    let phase = phase.ok_or_else(|| sdpa_err(0, "missing phase.value"))?;
    let get = |name: &str| sections.iter().find(|(k, _)| k == name).map(|(_, t)| t);
    let y = match get("xVec") {
        Some(t) => tree_numbers(t)?,
        None => return Err(sdpa_err(0, "missing xVec")),
    };
    if y.len() != problem.rows.len() {
        return Err(sdpa_err(0, format!("xVec has {} entries, expected {}", y.len(), problem.rows.len())));
    }
    let blocks = |name: &str| -> Result<(Vec<Mat<f64>>, Vec<f64>), SdpError> {
        let Some(Tree::List(items)) = get(name) else {
            return Err(sdpa_err(0, format!("missing {name}")));
        };
        let mut it = items.iter();
        let mut mats = Vec::with_capacity(problem.block_dims.len());
        for &n in &problem.block_dims {
            if n == 0 {
                mats.push(Mat::zeros(0, 0));
                continue;
            }
            let Some(Tree::List(rows)) = it.next() else {
                return Err(sdpa_err(0, format!("{name}: missing block")));
            };
            if rows.len() != n {
                return Err(sdpa_err(0, format!("{name}: block has {} rows, expected {n}", rows.len())));
            }
            let mut mat = Mat::zeros(n, n);
            for (i, r) in rows.iter().enumerate() {
                let vals = tree_numbers(r)?;
                if vals.len() != n {
                    return Err(sdpa_err(0, format!("{name}: row of length {}, expected {n}", vals.len())));
                }
                for (j, v) in vals.into_iter().enumerate() {
                    mat[(i, j)] = v;
                }
            }
            mats.push(mat);
        }
        let free = if problem.num_free > 0 {
            let t = it.next().ok_or_else(|| sdpa_err(0, format!("{name}: missing free-variable block")))?;
            let v = tree_numbers(t)?;
            if v.len() != 2 * problem.num_free {
                return Err(sdpa_err(0, format!("{name}: LP block of length {}", v.len())));
            }
            v.chunks(2).map(|c| c[0] - c[1]).collect()
        } else {
            Vec::new()
        };
        Ok((mats, free))
    };
    let (s, _) = blocks("xMat")?;
    let (x, x_free) = blocks("yMat")?;
    Ok(SdpaSolution {
        status: status_of(&phase),
        phase,
        primal_objective: pobj,
        dual_objective: dobj,
        x,
        x_free,
        y,
        s,
    })
}
