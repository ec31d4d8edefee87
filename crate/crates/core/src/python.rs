//! Python syntax facts needed by the extractor and the harness: function
//! definitions with spans, parents and parameter lists, plus simple file
//! metrics.

use tree_sitter::{Node, Parser, Tree};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("python parse error at line {line}, column {column}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
}

/// A `def` found in a source file. Lines are 1-based and inclusive; the span
/// starts at the `def` keyword line (decorators excluded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: String,
    /// Name of the immediately enclosing class or function, if any.
    pub parent: Option<String>,
    pub start_line: usize,
    pub end_line: usize,
    pub parameters: Vec<String>,
    /// Nesting depth among functions and classes (0 = module level).
    pub depth: usize,
    pub start_byte: usize,
    pub end_byte: usize,
}

impl FunctionDef {
    /// `Parent.name`, or the bare name at module level.
    pub fn qualified_name(&self) -> String {
        match &self.parent {
            Some(p) => format!("{p}.{}", self.name),
            None => self.name.clone(),
        }
    }

    pub fn contains_line(&self, line: usize) -> bool {
        self.start_line <= line && line <= self.end_line
    }
}

fn parse_tree(source: &str) -> Tree {
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_python::LANGUAGE.into())
        .expect("python grammar is ABI compatible");
    parser.parse(source, None).expect("parser has a language and no timeout")
}

fn first_error(node: Node<'_>) -> Option<Node<'_>> {
    if node.is_error() || node.is_missing() {
        return Some(node);
    }
    if !node.has_error() {
        return None;
    }
    let mut cursor = node.walk();
    let found = node.children(&mut cursor).find_map(first_error);
    found.or(Some(node))
}

fn parse_checked(source: &str) -> Result<Tree, ParseError> {
    let tree = parse_tree(source);
    if let Some(err) = first_error(tree.root_node()) {
        let p = err.start_position();
        return Err(ParseError { line: p.row + 1, column: p.column + 1 });
    }
    Ok(tree)
}

/// True when `source` parses cleanly.
pub fn parses(source: &str) -> bool {
    parse_checked(source).is_ok()
}

/// True when `source` parses cleanly and defines at least one function or
/// class at module level.
pub fn parses_as_definitions(source: &str) -> bool {
    let Ok(tree) = parse_checked(source) else {
        return false;
    };
    let root = tree.root_node();
    let mut cursor = root.walk();
    let found = root
        .named_children(&mut cursor)
        .any(|n| matches!(n.kind(), "function_definition" | "class_definition" | "decorated_definition"));
    found
}

fn text<'a>(node: Node<'_>, src: &'a str) -> &'a str {
    &src[node.byte_range()]
}

fn parameter_names(params: Node<'_>, src: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cursor = params.walk();
    for p in params.named_children(&mut cursor) {
        let name = match p.kind() {
            "identifier" => text(p, src).to_string(),
            "default_parameter" | "typed_default_parameter" => p
                .child_by_field_name("name")
                .map(|n| text(n, src).to_string())
                .unwrap_or_else(|| text(p, src).to_string()),
            "typed_parameter" => {
                let mut c = p.walk();
                let first = p.named_children(&mut c).next();
                first.map(|n| text(n, src).to_string()).unwrap_or_default()
            }
            "list_splat_pattern" | "dictionary_splat_pattern" | "keyword_separator" | "positional_separator" => {
                text(p, src).to_string()
            }
            "comment" => continue,
            _ => text(p, src).to_string(),
        };
        out.push(name);
    }
    out
}

fn collect(node: Node<'_>, src: &str, parent: Option<&str>, depth: usize, out: &mut Vec<FunctionDef>) {
    let mut cursor = node.walk();
    for child in node.named_children(&mut cursor) {
        match child.kind() {
            "function_definition" => {
                let name = child
                    .child_by_field_name("name")
                    .map(|n| text(n, src).to_string())
                    .unwrap_or_default();
                let parameters = child
                    .child_by_field_name("parameters")
                    .map(|p| parameter_names(p, src))
                    .unwrap_or_default();
                out.push(FunctionDef {
                    name: name.clone(),
                    parent: parent.map(str::to_string),
                    start_line: child.start_position().row + 1,
                    end_line: child.end_position().row + 1,
                    parameters,
                    depth,
                    start_byte: child.start_byte(),
                    end_byte: child.end_byte(),
                });
                if let Some(body) = child.child_by_field_name("body") {
                    collect(body, src, Some(&name), depth + 1, out);
                }
            }
            "class_definition" => {
                let name = child
                    .child_by_field_name("name")
                    .map(|n| text(n, src).to_string())
                    .unwrap_or_default();
                if let Some(body) = child.child_by_field_name("body") {
                    collect(body, src, Some(&name), depth + 1, out);
                }
            }
            _ => collect(child, src, parent, depth, out),
        }
    }
}

/// Every function definition in source order (outer before inner).
pub fn functions(source: &str) -> Result<Vec<FunctionDef>, ParseError> {
    let tree = parse_checked(source)?;
    let mut out = Vec::new();
    collect(tree.root_node(), source, None, 0, &mut out);
    Ok(out)
}

const DECISION_KINDS: &[&str] = &[
    "if_statement",
    "elif_clause",
    "for_statement",
    "while_statement",
    "except_clause",
    "conditional_expression",
    "boolean_operator",
    "for_in_clause",
    "if_clause",
    "case_clause",
];

/// Cyclomatic complexity summed over functions: one per function plus one per
/// branching construct inside it.
pub fn complexity(source: &str) -> Result<usize, ParseError> {
    let tree = parse_checked(source)?;
    fn walk(node: Node<'_>, in_function: bool, acc: &mut usize) {
        let is_fn = node.kind() == "function_definition";
        if is_fn {
            *acc += 1;
        } else if in_function && DECISION_KINDS.contains(&node.kind()) {
            *acc += 1;
        }
        let mut cursor = node.walk();
        for child in node.children(&mut cursor) {
            walk(child, in_function || is_fn, acc);
        }
    }
    let mut total = 0;
    walk(tree.root_node(), false, &mut total);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_CLASSES: &str = "\
class A:
    def run(self):
        return 1

class B:
    def run(self):
        x = 2
        return x
";

    #[test]
    fn methods_get_class_parents() {
        let fns = functions(TWO_CLASSES).unwrap();
        let names: Vec<String> = fns.iter().map(|f| f.qualified_name()).collect();
        assert_eq!(names, vec!["A.run", "B.run"]);
        assert_eq!((fns[1].start_line, fns[1].end_line), (6, 8));
        assert_eq!(fns[1].parameters, vec!["self"]);
    }

    #[test]
    fn nested_functions() {
        let src = "def outer(a, b=1, *args, c: int = 2, **kw):\n    def inner():\n        pass\n    return inner\n";
        let fns = functions(src).unwrap();
        assert_eq!(fns[0].qualified_name(), "outer");
        assert_eq!(fns[1].qualified_name(), "outer.inner");
        assert_eq!(fns[1].depth, 1);
        assert_eq!(fns[0].parameters, vec!["a", "b", "*args", "c", "**kw"]);
    }

    #[test]
    fn decorated_function_span_starts_at_def() {
        let src = "@decorator\ndef f():\n    return 1\n";
        let fns = functions(src).unwrap();
        assert_eq!((fns[0].start_line, fns[0].end_line), (2, 3));
    }

    #[test]
    fn syntax_errors_are_reported() {
        assert!(functions("def f(:\n    pass\n").is_err());
        assert!(!parses("this is prose, not code."));
        assert!(parses(""));
        assert!(parses_as_definitions("def f():\n    return 1"));
        assert!(!parses_as_definitions("x = 1\n"));
    }

    #[test]
    fn complexity_counts_branches() {
        let src = "def f(x):\n    if x and x > 1:\n        return 1\n    for i in x:\n        pass\n    return 0\n\ndef g():\n    pass\n";
        // f: 1 + if + and + for = 4, g: 1
        assert_eq!(complexity(src).unwrap(), 5);
    }
}
