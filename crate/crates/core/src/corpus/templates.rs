//! Program skeletons for the ten algorithm classes. Each instantiation
//! draws identifier names from a shared pool, an array length, and a few
//! structural variants (loop form, comparison spelling, declaration order,
//! output form).

use rand::seq::SliceRandom;
use rand::Rng;

/// Identifiers shared by every class, so renaming has a real vocabulary
/// to work with and names alone do not reveal the class.
pub const IDENTIFIER_POOL: [&str; 60] = [
    "arr", "data", "values", "nums", "items", "buf", "xs", "vec", "seq", "a", "b", "c", "i", "j", "k", "n", "m",
    "idx", "pos", "tmp", "t", "key", "lo", "hi", "mid", "left", "right", "total", "acc", "best", "cur", "prev",
    "nxt", "res", "result", "count", "cnt", "x", "y", "z", "p", "q", "r", "u", "v", "w", "val", "elem", "item",
    "target", "needle", "found", "flag", "limit", "len", "size", "step", "aux", "hold", "mark",
];

pub const TEMPLATE_NAMES: [&str; 10] = [
    "bubble_sort",
    "insertion_sort",
    "selection_sort",
    "linear_search",
    "binary_search",
    "array_sum",
    "array_max",
    "reverse_array",
    "fibonacci",
    "gcd",
];

/// Function-name spellings used per class.
pub const FUNCTION_NAMES: [&[&str]; 10] = [
    &["bubbleSort", "bubble_sort", "bubbleSortArray"],
    &["insertionSort", "insertion_sort", "insertSort"],
    &["selectionSort", "selection_sort", "selectSort"],
    &["linearSearch", "linear_search", "findIndex"],
    &["binarySearch", "binary_search", "binarySearchIndex"],
    &["arraySum", "sumArray", "computeSum"],
    &["arrayMax", "findMax", "maxElement"],
    &["reverseArray", "reverse_array", "reverseInPlace"],
    &["fibonacci", "fib", "computeFibonacci"],
    &["gcd", "greatestCommonDivisor", "computeGcd"],
];

/// What a template instantiation needs as input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputShape {
    /// One array of the given length.
    Array(usize),
    /// An array followed by a value to look for.
    ArrayAndKey { len: usize, sorted: bool },
    /// A small non-negative count.
    Count,
    /// Two positive integers.
    PositivePair,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub source: String,
    pub function_name: String,
    pub input: InputShape,
}

/// Distinct identifiers drawn from a shuffled copy of the pool.
struct Names<'a, R: Rng> {
    pool: Vec<&'static str>,
    rng: &'a mut R,
}

impl<R: Rng> Names<'_, R> {
    fn take(&mut self) -> &'static str {
        self.pool.pop().expect("pool larger than any template's needs")
    }
}

fn loop_up<R: Rng>(rng: &mut R, var: &str, start: &str, bound: &str, body: &[String]) -> Vec<String> {
    if rng.gen_bool(0.6) {
        let mut out = vec![format!("for ({var} = {start}; {var} < {bound}; {var} = {var} + 1) {{")];
        out.extend(body.iter().map(|l| format!("    {l}")));
        out.push("}".into());
        out
    } else {
        let mut out = vec![format!("{var} = {start};"), format!("while ({var} < {bound}) {{")];
        out.extend(body.iter().map(|l| format!("    {l}")));
        out.push(format!("    {var} = {var} + 1;"));
        out.push("}".into());
        out
    }
}

fn declarations<R: Rng>(rng: &mut R, vars: &[&str]) -> Vec<String> {
    let mut lines: Vec<String> = vars.iter().map(|v| format!("int {v};")).collect();
    lines.shuffle(rng);
    lines
}

fn print_array<R: Rng>(rng: &mut R, arr: &str, idx: &str, n: usize) -> Vec<String> {
    loop_up(rng, idx, "0", &n.to_string(), &[format!("print({arr}[{idx}]);")])
}

fn swap(arr: &str, x: &str, y: &str, tmp: &str) -> Vec<String> {
    vec![
        format!("{tmp} = {arr}[{x}];"),
        format!("{arr}[{x}] = {arr}[{y}];"),
        format!("{arr}[{y}] = {tmp};"),
    ]
}

fn indent(lines: Vec<String>) -> String {
    lines.iter().map(|l| format!("    {l}\n")).collect()
}

fn function(name: &str, params: &str, body: Vec<String>) -> String {
    format!("int {name}({params}) {{\n{}}}\n", indent(body))
}

fn array_output<R: Rng>(rng: &mut R, arr: &str, idx: &str, n: usize) -> Vec<String> {
    let mut out = print_array(rng, arr, idx, n);
    if rng.gen_bool(0.5) {
        out.push("return 0;".into());
    } else {
        out.push(format!("return {arr}[0];"));
    }
    out
}

fn bubble_sort<R: Rng>(names: &mut Names<R>, n: usize) -> (String, Vec<String>) {
    let (a, i, j, t) = (names.take(), names.take(), names.take(), names.take());
    let rng = &mut *names.rng;
    let early_exit = rng.gen_bool(0.5);
    let flag = if early_exit { Some(names.take()) } else { None };
    let rng = &mut *names.rng;
    let cmp = if rng.gen_bool(0.5) {
        format!("{a}[{j}] > {a}[{j} + 1]")
    } else {
        format!("{a}[{j} + 1] < {a}[{j}]")
    };
    let mut then = swap(a, j, &format!("{j} + 1"), t);
    if let Some(f) = flag {
        then.push(format!("{f} = 1;"));
    }
    let mut inner_body = vec![format!("if ({cmp}) {{")];
    inner_body.extend(then.into_iter().map(|l| format!("    {l}")));
    inner_body.push("}".into());
    let inner = loop_up(rng, j, "0", &format!("{n} - 1 - {i}"), &inner_body);
    let mut outer_body = Vec::new();
    if let Some(f) = flag {
        outer_body.push(format!("{f} = 0;"));
    }
    outer_body.extend(inner);
    if let Some(f) = flag {
        outer_body.push(format!("if ({f} == 0) {{"));
        outer_body.push("    break;".into());
        outer_body.push("}".into());
    }
    let mut vars = vec![i, j, t];
    vars.extend(flag);
    let mut body = declarations(rng, &vars);
    body.extend(loop_up(rng, i, "0", &format!("{n} - 1"), &outer_body));
    body.extend(array_output(rng, a, i, n));
    (format!("int {a}[{n}]"), body)
}

fn insertion_sort<R: Rng>(names: &mut Names<R>, n: usize) -> (String, Vec<String>) {
    let (a, i, j, key) = (names.take(), names.take(), names.take(), names.take());
    let rng = &mut *names.rng;
    let mut outer = vec![format!("{key} = {a}[{i}];")];
    if rng.gen_bool(0.5) {
        outer.push(format!("{j} = {i} - 1;"));
        outer.push(format!("while ({j} >= 0 && {a}[{j}] > {key}) {{"));
        outer.push(format!("    {a}[{j} + 1] = {a}[{j}];"));
        outer.push(format!("    {j} = {j} - 1;"));
        outer.push("}".into());
    } else {
        outer.push(format!("for ({j} = {i} - 1; {j} >= 0; {j} = {j} - 1) {{"));
        outer.push(format!("    if ({a}[{j}] > {key}) {{"));
        outer.push(format!("        {a}[{j} + 1] = {a}[{j}];"));
        outer.push("    } else {".into());
        outer.push("        break;".into());
        outer.push("    }".into());
        outer.push("}".into());
    }
    outer.push(format!("{a}[{j} + 1] = {key};"));
    let mut body = declarations(rng, &[i, j, key]);
    body.extend(loop_up(rng, i, "1", &n.to_string(), &outer));
    body.extend(array_output(rng, a, i, n));
    (format!("int {a}[{n}]"), body)
}

fn selection_sort<R: Rng>(names: &mut Names<R>, n: usize) -> (String, Vec<String>) {
    let (a, i, j, m, t) = (names.take(), names.take(), names.take(), names.take(), names.take());
    let rng = &mut *names.rng;
    let cmp = if rng.gen_bool(0.5) {
        format!("{a}[{j}] < {a}[{m}]")
    } else {
        format!("{a}[{m}] > {a}[{j}]")
    };
    let inner = loop_up(
        rng,
        j,
        &format!("{i} + 1"),
        &n.to_string(),
        &[format!("if ({cmp}) {{"), format!("    {m} = {j};"), "}".into()],
    );
    let mut outer = vec![format!("{m} = {i};")];
    outer.extend(inner);
    if rng.gen_bool(0.5) {
        outer.push(format!("if ({m} != {i}) {{"));
        outer.extend(swap(a, i, m, t).into_iter().map(|l| format!("    {l}")));
        outer.push("}".into());
    } else {
        outer.extend(swap(a, i, m, t));
    }
    let mut body = declarations(rng, &[i, j, m, t]);
    body.extend(loop_up(rng, i, "0", &format!("{n} - 1"), &outer));
    body.extend(array_output(rng, a, i, n));
    (format!("int {a}[{n}]"), body)
}

fn linear_search<R: Rng>(names: &mut Names<R>, n: usize) -> (String, Vec<String>) {
    let (a, x, i, r) = (names.take(), names.take(), names.take(), names.take());
    let rng = &mut *names.rng;
    let mut body = declarations(rng, &[i, r]);
    body.push(format!("{r} = -1;"));
    if rng.gen_bool(0.5) {
        body.extend(loop_up(
            rng,
            i,
            "0",
            &n.to_string(),
            &[
                format!("if ({a}[{i}] == {x}) {{"),
                format!("    {r} = {i};"),
                "    break;".into(),
                "}".into(),
            ],
        ));
    } else {
        body.push(format!("{i} = 0;"));
        body.push(format!("while ({i} < {n} && {r} < 0) {{"));
        body.push(format!("    if ({a}[{i}] == {x}) {{"));
        body.push(format!("        {r} = {i};"));
        body.push("    }".into());
        body.push(format!("    {i} = {i} + 1;"));
        body.push("}".into());
    }
    if rng.gen_bool(0.5) {
        body.push(format!("print({r});"));
    }
    body.push(format!("return {r};"));
    (format!("int {a}[{n}], int {x}"), body)
}

fn binary_search<R: Rng>(names: &mut Names<R>, n: usize) -> (String, Vec<String>) {
    let (a, x, lo, hi, mid, r) = (names.take(), names.take(), names.take(), names.take(), names.take(), names.take());
    let rng = &mut *names.rng;
    let mut body = declarations(rng, &[lo, hi, mid, r]);
    let mut inits = vec![
        format!("{lo} = 0;"),
        format!("{hi} = {n} - 1;"),
        format!("{r} = -1;"),
    ];
    inits.shuffle(rng);
    body.extend(inits);
    body.push(format!("while ({lo} <= {hi}) {{"));
    body.push(format!("    {mid} = ({lo} + {hi}) / 2;"));
    if rng.gen_bool(0.5) {
        body.push(format!("    if ({a}[{mid}] == {x}) {{"));
        body.push(format!("        {r} = {mid};"));
        body.push("        break;".into());
        body.push("    }".into());
        body.push(format!("    if ({a}[{mid}] < {x}) {{"));
        body.push(format!("        {lo} = {mid} + 1;"));
        body.push("    } else {".into());
        body.push(format!("        {hi} = {mid} - 1;"));
        body.push("    }".into());
    } else {
        body.push(format!("    if ({a}[{mid}] < {x}) {{"));
        body.push(format!("        {lo} = {mid} + 1;"));
        body.push(format!("    }} else if ({a}[{mid}] > {x}) {{"));
        body.push(format!("        {hi} = {mid} - 1;"));
        body.push("    } else {".into());
        body.push(format!("        {r} = {mid};"));
        body.push(format!("        {lo} = {hi} + 1;"));
        body.push("    }".into());
    }
    body.push("}".into());
    body.push(format!("return {r};"));
    (format!("int {a}[{n}], int {x}"), body)
}

fn array_sum<R: Rng>(names: &mut Names<R>, n: usize) -> (String, Vec<String>) {
    let (a, i, s) = (names.take(), names.take(), names.take());
    let rng = &mut *names.rng;
    let mut body = declarations(rng, &[i, s]);
    body.push(format!("{s} = 0;"));
    if rng.gen_bool(0.6) {
        body.extend(loop_up(rng, i, "0", &n.to_string(), &[format!("{s} = {s} + {a}[{i}];")]));
    } else {
        body.push(format!("{i} = {n} - 1;"));
        body.push(format!("while ({i} >= 0) {{"));
        body.push(format!("    {s} = {s} + {a}[{i}];"));
        body.push(format!("    {i} = {i} - 1;"));
        body.push("}".into());
    }
    if rng.gen_bool(0.5) {
        body.push(format!("print({s});"));
    }
    body.push(format!("return {s};"));
    (format!("int {a}[{n}]"), body)
}

fn array_max<R: Rng>(names: &mut Names<R>, n: usize) -> (String, Vec<String>) {
    let (a, i, m) = (names.take(), names.take(), names.take());
    let rng = &mut *names.rng;
    let mut body = declarations(rng, &[i, m]);
    if rng.gen_bool(0.5) {
        body.push(format!("{m} = {a}[0];"));
        body.extend(loop_up(
            rng,
            i,
            "1",
            &n.to_string(),
            &[format!("if ({a}[{i}] > {m}) {{"), format!("    {m} = {a}[{i}];"), "}".into()],
        ));
        if rng.gen_bool(0.5) {
            body.push(format!("print({m});"));
        }
        body.push(format!("return {m};"));
    } else {
        body.push(format!("{m} = 0;"));
        body.extend(loop_up(
            rng,
            i,
            "1",
            &n.to_string(),
            &[format!("if ({a}[{i}] > {a}[{m}]) {{"), format!("    {m} = {i};"), "}".into()],
        ));
        body.push(format!("return {a}[{m}];"));
    }
    (format!("int {a}[{n}]"), body)
}

fn reverse_array<R: Rng>(names: &mut Names<R>, n: usize) -> (String, Vec<String>) {
    let (a, i, j, t) = (names.take(), names.take(), names.take(), names.take());
    let rng = &mut *names.rng;
    let mut body;
    if rng.gen_bool(0.5) {
        body = declarations(rng, &[i, t]);
        body.extend(loop_up(rng, i, "0", &format!("{n} / 2"), &swap(a, i, &format!("{n} - 1 - {i}"), t)));
    } else {
        body = declarations(rng, &[i, j, t]);
        body.push(format!("{i} = 0;"));
        body.push(format!("{j} = {n} - 1;"));
        body.push(format!("while ({i} < {j}) {{"));
        body.extend(swap(a, i, j, t).into_iter().map(|l| format!("    {l}")));
        body.push(format!("    {i} = {i} + 1;"));
        body.push(format!("    {j} = {j} - 1;"));
        body.push("}".into());
    }
    body.extend(array_output(rng, a, i, n));
    (format!("int {a}[{n}]"), body)
}

fn fibonacci<R: Rng>(names: &mut Names<R>, _n: usize) -> (String, Vec<String>) {
    let (x, i, p, q, t) = (names.take(), names.take(), names.take(), names.take(), names.take());
    let rng = &mut *names.rng;
    let mut body = declarations(rng, &[i, p, q, t]);
    let mut inits = vec![format!("{p} = 0;"), format!("{q} = 1;")];
    inits.shuffle(rng);
    body.extend(inits);
    let mut step = vec![format!("{t} = {p} + {q};"), format!("{p} = {q};"), format!("{q} = {t};")];
    if rng.gen_bool(0.4) {
        step.insert(0, format!("print({p});"));
    }
    body.extend(loop_up(rng, i, "0", x, &step));
    body.push(format!("return {p};"));
    (format!("int {x}"), body)
}

fn gcd<R: Rng>(names: &mut Names<R>, _n: usize) -> (String, Vec<String>) {
    let (x, y, t) = (names.take(), names.take(), names.take());
    let rng = &mut *names.rng;
    let mut body;
    if rng.gen_bool(0.5) {
        body = vec![format!("int {t};")];
        body.push(format!("while ({y} != 0) {{"));
        body.push(format!("    {t} = {x} % {y};"));
        body.push(format!("    {x} = {y};"));
        body.push(format!("    {y} = {t};"));
        body.push("}".into());
    } else {
        body = Vec::new();
        body.push(format!("while ({x} != {y}) {{"));
        body.push(format!("    if ({x} > {y}) {{"));
        body.push(format!("        {x} = {x} - {y};"));
        body.push("    } else {".into());
        body.push(format!("        {y} = {y} - {x};"));
        body.push("    }".into());
        body.push("}".into());
    }
    if rng.gen_bool(0.4) {
        body.push(format!("print({x});"));
    }
    body.push(format!("return {x};"));
    (format!("int {x}, int {y}"), body)
}

/// Instantiates template `class` with names, sizes and variants from `rng`.
pub fn instantiate<R: Rng>(class: usize, rng: &mut R) -> Instance {
    let variants = FUNCTION_NAMES[class];
    let function_name = variants[rng.gen_range(0..variants.len())].to_string();
    let n = rng.gen_range(5..=8);
    let mut pool = IDENTIFIER_POOL.to_vec();
    pool.shuffle(rng);
    let mut names = Names { pool, rng };
    let (params, body) = match class {
        0 => bubble_sort(&mut names, n),
        1 => insertion_sort(&mut names, n),
        2 => selection_sort(&mut names, n),
        3 => linear_search(&mut names, n),
        4 => binary_search(&mut names, n),
        5 => array_sum(&mut names, n),
        6 => array_max(&mut names, n),
        7 => reverse_array(&mut names, n),
        8 => fibonacci(&mut names, n),
        9 => gcd(&mut names, n),
        _ => panic!("template index {class} out of range"),
    };
    let input = match class {
        3 => InputShape::ArrayAndKey { len: n, sorted: false },
        4 => InputShape::ArrayAndKey { len: n, sorted: true },
        8 => InputShape::Count,
        9 => InputShape::PositivePair,
        _ => InputShape::Array(n),
    };
    Instance {
        source: function(&function_name, &params, body),
        function_name,
        input,
    }
}

/// One test input for an instance.
pub fn sample_input<R: Rng>(shape: InputShape, rng: &mut R) -> Vec<i64> {
    let array = |len: usize, rng: &mut R| -> Vec<i64> { (0..len).map(|_| rng.gen_range(-20..=20)).collect() };
    match shape {
        InputShape::Array(len) => array(len, rng),
        InputShape::ArrayAndKey { len, sorted } => {
            let mut a = array(len, rng);
            if sorted {
                a.sort_unstable();
            }
            let key = if rng.gen_bool(0.6) {
                a[rng.gen_range(0..len)]
            } else {
                rng.gen_range(-25..=25)
            };
            a.push(key);
            a
        }
        InputShape::Count => vec![rng.gen_range(0..=20)],
        InputShape::PositivePair => vec![rng.gen_range(1..=60), rng.gen_range(1..=60)],
    }
}
