"""Deterministic, capability-scoped interpreter for transformation scripts.

Scripts use a small Python-syntax subset, parsed with ast and executed by
this walker; nothing is ever handed to exec/eval. A script can touch only
the values and host functions placed in its environment, so capability
enforcement is by construction: there is no import, no attribute access
outside an allow-list of value methods, no dunder names, and no ambient
clock or randomness.

Budgets are enforced by metering rather than wall-clock kills, which keeps
execution deterministic: every evaluated node costs ops, every sizable
allocation is charged against the memory budget before it happens, and
emitted output is charged by the host emit function.
"""

from __future__ import annotations

import ast
import operator as _operator
from dataclasses import dataclass, field

OPS_PER_CPU_SECOND = 200_000
MAX_INT_BITS = 64_000
MAX_CALL_DEPTH = 48


@dataclass(frozen=True)
class ExecutionBudget:
    cpu_seconds: float = 2.0
    memory_bytes: int = 64 * 2**20
    output_bytes: int = 2**20

    def __post_init__(self):
        if self.cpu_seconds <= 0 or self.memory_bytes <= 0 or self.output_bytes <= 0:
            raise ValueError("budgets must be positive")

    @property
    def ops_limit(self) -> int:
        return int(self.cpu_seconds * OPS_PER_CPU_SECOND)


class ScriptError(Exception):
    """Base for everything a hostile or broken script can cause."""


class ScriptSyntaxError(ScriptError):
    pass


class CapabilityError(ScriptError):
    """The script reached for something outside its capability surface."""


class BudgetExceeded(ScriptError):
    def __init__(self, resource: str, detail: str = ""):
        super().__init__(f"{resource} budget exceeded{': ' + detail if detail else ''}")
        self.resource = resource


class ScriptRuntimeError(ScriptError):
    pass


class Meter:
    """Shared resource accounting for one top-level execution, including
    any nested runs a presenter triggers."""

    def __init__(self, budget: ExecutionBudget):
        self.budget = budget
        self.ops = 0
        self.alloc = 0
        self.output = 0

    def tick(self, n: int = 1) -> None:
        self.ops += n
        if self.ops > self.budget.ops_limit:
            raise BudgetExceeded("cpu", f"{self.ops} ops")

    def charge_alloc(self, nbytes: int) -> None:
        self.alloc += nbytes
        if self.alloc > self.budget.memory_bytes:
            raise BudgetExceeded("memory", f"~{self.alloc} bytes")

    def charge_output(self, nbytes: int) -> None:
        self.output += nbytes
        if self.output > self.budget.output_bytes:
            raise BudgetExceeded("output", f"{self.output} bytes")


# -- control flow signals ------------------------------------------------------


class _Break(Exception):
    pass


class _Continue(Exception):
    pass


class _Return(Exception):
    def __init__(self, value):
        self.value = value


@dataclass
class ScriptFunction:
    name: str
    params: list[str]
    defaults: list
    body: list
    interp: "Interpreter" = field(repr=False)


# -- allowed surface ------------------------------------------------------------

_ALLOWED_STMT = (
    ast.Expr,
    ast.Assign,
    ast.AugAssign,
    ast.AnnAssign,
    ast.If,
    ast.For,
    ast.While,
    ast.Break,
    ast.Continue,
    ast.Pass,
    ast.Return,
    ast.FunctionDef,
)

_ALLOWED_EXPR = (
    ast.Constant,
    ast.Name,
    ast.BinOp,
    ast.UnaryOp,
    ast.BoolOp,
    ast.Compare,
    ast.Call,
    ast.List,
    ast.Tuple,
    ast.Dict,
    ast.Subscript,
    ast.Slice,
    ast.Attribute,
    ast.IfExp,
    ast.JoinedStr,
    ast.FormattedValue,
    ast.ListComp,
    ast.comprehension,
    ast.keyword,
    ast.Starred,  # rejected later with a clearer message
)

_SAFE_METHODS: dict[type, frozenset] = {
    str: frozenset(
        {
            "split", "rsplit", "splitlines", "join", "strip", "lstrip", "rstrip",
            "lower", "upper", "title", "capitalize", "replace", "startswith",
            "endswith", "find", "rfind", "index", "count", "zfill", "isdigit",
            "isalpha", "isalnum", "isspace", "encode",
        }
    ),
    bytes: frozenset({"decode", "hex", "startswith", "endswith", "count"}),
    list: frozenset(
        {
            "append", "extend", "insert", "pop", "remove", "index", "count",
            "sort", "reverse", "copy", "clear",
        }
    ),
    dict: frozenset(
        {"get", "keys", "values", "items", "pop", "setdefault", "update", "clear", "copy"}
    ),
    tuple: frozenset({"index", "count"}),
}

_CONTAINER_TYPES = (list, tuple, dict, str, bytes, range)


def _sizeof(value) -> int:
    """Shallow allocation estimate; good enough to stop memory bombs."""
    if isinstance(value, (str, bytes)):
        return len(value)
    if isinstance(value, (list, tuple)):
        return 16 * len(value) + sum(
            len(v) for v in value if isinstance(v, (str, bytes))
        )
    if isinstance(value, dict):
        return 48 * len(value)
    if isinstance(value, int) and not isinstance(value, bool):
        return max(8, value.bit_length() // 8)
    return 8


def _length_hint(value):
    if isinstance(value, (list, tuple, dict, str, bytes, range)):
        return len(value)
    return None


class Interpreter:
    """One script execution environment over a shared meter."""

    def __init__(self, env: dict, meter: Meter):
        self.globals: dict = {}
        self.env = env
        self.meter = meter
        self.depth = 0

    # -- entry points ------------------------------------------------------

    def run(self, source: str) -> None:
        try:
            tree = ast.parse(source, mode="exec")
        except (SyntaxError, ValueError, RecursionError) as exc:
            raise ScriptSyntaxError(f"parse error: {exc}") from exc
        _validate(tree)
        try:
            self._exec_block(tree.body, self.globals)
        except (_Break, _Continue):
            raise ScriptRuntimeError("break/continue outside loop") from None
        except _Return:
            raise ScriptRuntimeError("return outside function") from None

    def call_function(self, fn: ScriptFunction, args: list, kwargs: dict | None = None):
        kwargs = kwargs or {}
        self.meter.tick()
        if self.depth >= MAX_CALL_DEPTH:
            raise BudgetExceeded("cpu", "call depth")
        scope: dict = {}
        params = list(fn.params)
        if len(args) > len(params):
            raise ScriptRuntimeError(f"{fn.name}() takes {len(params)} arguments")
        for name, value in zip(params, args):
            scope[name] = value
        for name, value in kwargs.items():
            if name not in params:
                raise ScriptRuntimeError(f"{fn.name}() got unexpected argument {name!r}")
            if name in scope:
                raise ScriptRuntimeError(f"{fn.name}() got duplicate argument {name!r}")
            scope[name] = value
        n_defaults = len(fn.defaults)
        for i, name in enumerate(params):
            if name not in scope:
                default_index = i - (len(params) - n_defaults)
                if default_index < 0:
                    raise ScriptRuntimeError(f"{fn.name}() missing argument {name!r}")
                scope[name] = fn.defaults[default_index]
        self.depth += 1
        try:
            self._exec_block(fn.body, scope)
        except _Return as ret:
            return ret.value
        finally:
            self.depth -= 1
        return None

    # -- statements ----------------------------------------------------------

    def _exec_block(self, stmts, scope) -> None:
        for stmt in stmts:
            self._exec(stmt, scope)

    def _exec(self, node, scope) -> None:
        self.meter.tick()
        try:
            self._exec_inner(node, scope)
        except ScriptError:
            raise
        except (_Break, _Continue, _Return):
            raise
        except (
            TypeError, ValueError, KeyError, IndexError, ZeroDivisionError,
            ArithmeticError, AttributeError, UnicodeError, RecursionError, StopIteration,
        ) as exc:
            raise ScriptRuntimeError(
                f"line {getattr(node, 'lineno', '?')}: {type(exc).__name__}: {exc}"
            ) from exc

    def _exec_inner(self, node, scope) -> None:
        if isinstance(node, ast.Expr):
            self._eval(node.value, scope)
        elif isinstance(node, ast.Assign):
            value = self._eval(node.value, scope)
            for target in node.targets:
                self._assign(target, value, scope)
        elif isinstance(node, ast.AnnAssign):
            if node.value is not None:
                self._assign(node.target, self._eval(node.value, scope), scope)
        elif isinstance(node, ast.AugAssign):
            current = self._eval_target(node.target, scope)
            value = self._eval(node.value, scope)
            result = self._binop(node.op, current, value)
            self._assign(node.target, result, scope)
        elif isinstance(node, ast.If):
            branch = node.body if self._truth(self._eval(node.test, scope)) else node.orelse
            self._exec_block(branch, scope)
        elif isinstance(node, ast.While):
            if node.orelse:
                raise CapabilityError("while-else is not available")
            while True:
                self.meter.tick()
                if not self._truth(self._eval(node.test, scope)):
                    break
                try:
                    self._exec_block(node.body, scope)
                except _Break:
                    break
                except _Continue:
                    continue
        elif isinstance(node, ast.For):
            iterable = self._iter(self._eval(node.iter, scope))
            for item in iterable:
                self.meter.tick()
                self._assign(node.target, item, scope)
                try:
                    self._exec_block(node.body, scope)
                except _Break:
                    break
                except _Continue:
                    continue
            else:
                self._exec_block(node.orelse, scope)
        elif isinstance(node, ast.Break):
            raise _Break()
        elif isinstance(node, ast.Continue):
            raise _Continue()
        elif isinstance(node, ast.Pass):
            pass
        elif isinstance(node, ast.Return):
            raise _Return(self._eval(node.value, scope) if node.value else None)
        elif isinstance(node, ast.FunctionDef):
            params = [a.arg for a in node.args.args]
            defaults = [self._eval(d, scope) for d in node.args.defaults]
            scope[node.name] = ScriptFunction(node.name, params, defaults, node.body, self)
        else:
            raise CapabilityError(f"statement {type(node).__name__} is not available")

    def _assign(self, target, value, scope) -> None:
        if isinstance(target, ast.Name):
            scope[target.id] = value
        elif isinstance(target, ast.Tuple):
            values = list(self._iter(value))
            if len(values) != len(target.elts):
                raise ScriptRuntimeError(
                    f"cannot unpack {len(values)} values into {len(target.elts)} names"
                )
            for sub, v in zip(target.elts, values):
                self._assign(sub, v, scope)
        elif isinstance(target, ast.Subscript):
            container = self._eval(target.value, scope)
            key = self._eval(target.slice, scope)
            if isinstance(container, list):
                if not isinstance(key, int) or isinstance(key, bool):
                    raise ScriptRuntimeError("list indices must be integers")
                container[key] = value
            elif isinstance(container, dict):
                self._check_key(key)
                self.meter.charge_alloc(48 + _sizeof(value))
                container[key] = value
            else:
                raise CapabilityError(
                    f"cannot assign into {type(container).__name__}"
                )
        else:
            raise CapabilityError(f"cannot assign to {type(target).__name__}")

    def _eval_target(self, target, scope):
        if isinstance(target, ast.Name):
            return self._load_name(target.id, scope)
        if isinstance(target, ast.Subscript):
            return self._eval(target, scope)
        raise CapabilityError(f"cannot read assignment target {type(target).__name__}")

    # -- expressions ---------------------------------------------------------

    def _eval(self, node, scope):
        self.meter.tick()
        try:
            return self._eval_inner(node, scope)
        except ScriptError:
            raise
        except (
            TypeError, ValueError, KeyError, IndexError, ZeroDivisionError,
            ArithmeticError, AttributeError, UnicodeError, RecursionError, StopIteration,
        ) as exc:
            raise ScriptRuntimeError(
                f"line {getattr(node, 'lineno', '?')}: {type(exc).__name__}: {exc}"
            ) from exc

    def _eval_inner(self, node, scope):
        if isinstance(node, ast.Constant):
            if node.value is None or isinstance(node.value, (bool, int, float, str, bytes)):
                return node.value
            raise CapabilityError(f"constant {type(node.value).__name__} not available")
        if isinstance(node, ast.Name):
            return self._load_name(node.id, scope)
        if isinstance(node, ast.BinOp):
            left = self._eval(node.left, scope)
            right = self._eval(node.right, scope)
            return self._binop(node.op, left, right)
        if isinstance(node, ast.UnaryOp):
            value = self._eval(node.operand, scope)
            if isinstance(node.op, ast.Not):
                return not self._truth(value)
            if isinstance(node.op, ast.USub):
                return -value
            if isinstance(node.op, ast.UAdd):
                return +value
            if isinstance(node.op, ast.Invert):
                return ~value
            raise CapabilityError("unary operator not available")
        if isinstance(node, ast.BoolOp):
            is_and = isinstance(node.op, ast.And)
            result = None
            for sub in node.values:
                result = self._eval(sub, scope)
                truth = self._truth(result)
                if is_and and not truth:
                    return result
                if not is_and and truth:
                    return result
            return result
        if isinstance(node, ast.Compare):
            left = self._eval(node.left, scope)
            for op, comparator in zip(node.ops, node.comparators):
                right = self._eval(comparator, scope)
                if not self._compare(op, left, right):
                    return False
                left = right
            return True
        if isinstance(node, ast.IfExp):
            if self._truth(self._eval(node.test, scope)):
                return self._eval(node.body, scope)
            return self._eval(node.orelse, scope)
        if isinstance(node, ast.Call):
            return self._call(node, scope)
        if isinstance(node, ast.List):
            items = [self._eval(e, scope) for e in node.elts]
            self.meter.charge_alloc(16 * len(items))
            return items
        if isinstance(node, ast.Tuple):
            return tuple(self._eval(e, scope) for e in node.elts)
        if isinstance(node, ast.Dict):
            result = {}
            for k, v in zip(node.keys, node.values):
                if k is None:
                    raise CapabilityError("dict unpacking not available")
                key = self._eval(k, scope)
                self._check_key(key)
                result[key] = self._eval(v, scope)
            self.meter.charge_alloc(48 * len(result))
            return result
        if isinstance(node, ast.Subscript):
            container = self._eval(node.value, scope)
            if isinstance(node.slice, ast.Slice):
                if not isinstance(container, (list, tuple, str, bytes)):
                    raise CapabilityError(
                        f"cannot slice {type(container).__name__}"
                    )
                lower = self._eval(node.slice.lower, scope) if node.slice.lower else None
                upper = self._eval(node.slice.upper, scope) if node.slice.upper else None
                step = self._eval(node.slice.step, scope) if node.slice.step else None
                result = container[slice(lower, upper, step)]
                self.meter.charge_alloc(_sizeof(result))
                return result
            key = self._eval(node.slice, scope)
            if isinstance(container, dict):
                self._check_key(key)
                return container[key]
            if isinstance(container, (list, tuple, str, bytes, range)):
                if not isinstance(key, int) or isinstance(key, bool):
                    raise ScriptRuntimeError("sequence indices must be integers")
                return container[key]
            raise CapabilityError(f"cannot index {type(container).__name__}")
        if isinstance(node, ast.Attribute):
            return self._method(node, scope)
        if isinstance(node, ast.JoinedStr):
            parts = []
            for piece in node.values:
                if isinstance(piece, ast.Constant):
                    parts.append(piece.value)
                else:
                    parts.append(self._format_value(piece, scope))
            result = "".join(parts)
            self.meter.charge_alloc(len(result))
            return result
        if isinstance(node, ast.ListComp):
            return self._list_comp(node, scope)
        raise CapabilityError(f"expression {type(node).__name__} is not available")

    def _format_value(self, node: ast.FormattedValue, scope) -> str:
        value = self._eval(node.value, scope)
        if node.conversion == 114:  # !r
            value = repr(value) if isinstance(value, (str, bytes)) else value
        elif node.conversion == 115:  # !s
            value = self._to_str(value)
        spec = ""
        if node.format_spec is not None:
            spec = self._eval(node.format_spec, scope)
        if not isinstance(value, (str, bytes, int, float, bool)) and value is not None:
            value = self._to_str(value)
        if len(spec) > 32:
            raise BudgetExceeded("memory", "format spec too wide")
        result = format(value, spec)
        self.meter.charge_alloc(len(result))
        return result

    def _list_comp(self, node: ast.ListComp, scope):
        if len(node.generators) != 1:
            raise CapabilityError("only single-loop comprehensions are available")
        gen = node.generators[0]
        if gen.is_async:
            raise CapabilityError("async comprehensions are not available")
        result = []
        inner = dict(scope)
        for item in self._iter(self._eval(gen.iter, scope)):
            self.meter.tick()
            self._assign(gen.target, item, inner)
            if all(self._truth(self._eval(cond, inner)) for cond in gen.ifs):
                value = self._eval(node.elt, inner)
                self.meter.charge_alloc(16 + _sizeof(value) // 4)
                result.append(value)
        return result

    # -- helpers ---------------------------------------------------------------

    def _load_name(self, name: str, scope):
        if name in scope:
            return scope[name]
        if scope is not self.globals and name in self.globals:
            return self.globals[name]
        if name in self.env:
            return self.env[name]
        raise ScriptRuntimeError(f"name {name!r} is not defined")

    def _truth(self, value) -> bool:
        return bool(value)

    def _check_key(self, key) -> None:
        if isinstance(key, (str, int, float, bool, bytes)) or key is None:
            return
        if isinstance(key, tuple):
            for item in key:
                self._check_key(item)
            return
        raise CapabilityError(f"{type(key).__name__} cannot be a dict key")

    def _to_str(self, value) -> str:
        result = str(value)
        self.meter.charge_alloc(len(result))
        return result

    def _iter(self, value):
        if isinstance(value, (list, tuple, str, bytes, range)):
            return iter(list(value)) if isinstance(value, (list,)) else iter(value)
        if isinstance(value, dict):
            return iter(list(value.keys()))
        if isinstance(value, _LazyIter):
            return value.materialize(self.meter)
        raise CapabilityError(f"cannot iterate over {type(value).__name__}")

    def _guard_int(self, result: int) -> int:
        if isinstance(result, int) and not isinstance(result, bool):
            if result.bit_length() > MAX_INT_BITS:
                raise BudgetExceeded("memory", "integer too large")
        return result

    def _binop(self, op, left, right):
        if isinstance(op, ast.Add):
            if isinstance(left, (str, bytes, list, tuple)) and type(left) is type(right):
                self.meter.charge_alloc(_sizeof(left) + _sizeof(right))
            return self._guard_int(left + right)
        if isinstance(op, ast.Sub):
            return self._guard_int(left - right)
        if isinstance(op, ast.Mult):
            if isinstance(left, (str, bytes, list, tuple)) and isinstance(right, int):
                self.meter.charge_alloc(_sizeof(left) * max(right, 0) or 1)
            elif isinstance(right, (str, bytes, list, tuple)) and isinstance(left, int):
                self.meter.charge_alloc(_sizeof(right) * max(left, 0) or 1)
            elif isinstance(left, int) and isinstance(right, int):
                if left.bit_length() + right.bit_length() > MAX_INT_BITS:
                    raise BudgetExceeded("memory", "integer too large")
            return self._guard_int(left * right)
        if isinstance(op, ast.Div):
            return left / right
        if isinstance(op, ast.FloorDiv):
            return self._guard_int(left // right)
        if isinstance(op, ast.Mod):
            if isinstance(left, str):
                raise CapabilityError("%-formatting is not available")
            return self._guard_int(left % right)
        if isinstance(op, ast.Pow):
            if isinstance(left, int) and isinstance(right, int):
                if right > 4096 or left.bit_length() * max(right, 1) > MAX_INT_BITS:
                    raise BudgetExceeded("memory", "power too large")
            return self._guard_int(left**right)
        if isinstance(op, ast.LShift):
            if not isinstance(left, int) or not isinstance(right, int):
                raise ScriptRuntimeError("<< needs integers")
            if right > MAX_INT_BITS or left.bit_length() + max(right, 0) > MAX_INT_BITS:
                raise BudgetExceeded("memory", "shift too large")
            return left << right
        if isinstance(op, ast.RShift):
            return left >> right
        if isinstance(op, (ast.BitAnd, ast.BitOr, ast.BitXor)):
            table = {ast.BitAnd: _operator.and_, ast.BitOr: _operator.or_, ast.BitXor: _operator.xor}
            return self._guard_int(table[type(op)](left, right))
        raise CapabilityError(f"operator {type(op).__name__} is not available")

    def _compare(self, op, left, right) -> bool:
        if isinstance(op, ast.Eq):
            return left == right
        if isinstance(op, ast.NotEq):
            return left != right
        if isinstance(op, ast.Lt):
            return left < right
        if isinstance(op, ast.LtE):
            return left <= right
        if isinstance(op, ast.Gt):
            return left > right
        if isinstance(op, ast.GtE):
            return left >= right
        if isinstance(op, ast.In):
            return self._contains(left, right)
        if isinstance(op, ast.NotIn):
            return not self._contains(left, right)
        if isinstance(op, ast.Is):
            return left is right
        if isinstance(op, ast.IsNot):
            return left is not right
        raise CapabilityError("comparison not available")

    def _contains(self, needle, haystack) -> bool:
        if isinstance(haystack, (list, tuple, dict, str, bytes, range)):
            return needle in haystack
        raise CapabilityError(f"cannot test membership in {type(haystack).__name__}")

    # -- calls ---------------------------------------------------------------

    def _call(self, node: ast.Call, scope):
        args = []
        for a in node.args:
            if isinstance(a, ast.Starred):
                raise CapabilityError("*args unpacking is not available")
            args.append(self._eval(a, scope))
        kwargs = {}
        for kw in node.keywords:
            if kw.arg is None:
                raise CapabilityError("**kwargs unpacking is not available")
            kwargs[kw.arg] = self._eval(kw.value, scope)

        if isinstance(node.func, ast.Attribute):
            return self._method_call(node.func, args, kwargs, scope)
        if isinstance(node.func, ast.Name):
            name = node.func.id
            target = self._lookup_callable(name, scope)
            if isinstance(target, ScriptFunction):
                return target.interp.call_function(target, args, kwargs)
            if isinstance(target, _Builtin):
                return target(self, args, kwargs)
            if callable(target):  # host function
                self.meter.tick(4)
                return target(*args, **kwargs)
            raise ScriptRuntimeError(f"{name!r} is not callable")
        raise CapabilityError("only named functions and methods can be called")

    def _lookup_callable(self, name: str, scope):
        if name in scope:
            return scope[name]
        if scope is not self.globals and name in self.globals:
            return self.globals[name]
        if name in self.env:
            return self.env[name]
        if name in BUILTINS:
            return BUILTINS[name]
        raise ScriptRuntimeError(f"name {name!r} is not defined")

    def _method(self, node: ast.Attribute, scope):
        obj = self._eval(node.value, scope)
        self._check_method(obj, node.attr)
        return getattr(obj, node.attr)

    def _method_call(self, func: ast.Attribute, args, kwargs, scope):
        obj = self._eval(func.value, scope)
        name = func.attr
        self._check_method(obj, name)
        if isinstance(obj, list) and name == "sort":
            key = kwargs.pop("key", None)
            reverse = bool(kwargs.pop("reverse", False))
            if kwargs or args:
                raise ScriptRuntimeError("sort() takes key= and reverse= only")
            obj.sort(key=self._as_callable(key), reverse=reverse)
            return None
        if isinstance(obj, (list, dict)) and name in ("append", "update", "extend", "setdefault", "insert"):
            for a in args:
                self.meter.charge_alloc(16 + _sizeof(a) // 4)
        if isinstance(obj, str) and name == "encode":
            if args and args[0] not in ("utf-8", "utf8"):
                raise CapabilityError("only utf-8 encoding is available")
            result = obj.encode("utf-8")
            self.meter.charge_alloc(len(result))
            return result
        if isinstance(obj, bytes) and name == "decode":
            codec = args[0] if args else "utf-8"
            if codec not in ("utf-8", "utf8"):
                raise CapabilityError("only utf-8 decoding is available")
            errors = kwargs.get("errors", "strict")
            if errors not in ("strict", "replace", "ignore"):
                raise ScriptRuntimeError(f"unknown errors mode {errors!r}")
            result = obj.decode("utf-8", errors)
            self.meter.charge_alloc(len(result))
            return result
        self.meter.tick(2)
        result = getattr(obj, name)(*args, **kwargs)
        self.meter.charge_alloc(_sizeof(result) if result is not None else 0)
        if isinstance(result, type({}.keys())) or isinstance(result, type({}.values())):
            return list(result)
        if isinstance(result, type({}.items())):
            return [tuple(kv) for kv in result]
        return result

    def _check_method(self, obj, name: str) -> None:
        allowed = _SAFE_METHODS.get(type(obj))
        if allowed is None or name not in allowed:
            raise CapabilityError(
                f"{type(obj).__name__}.{name} is not available"
            )

    def _as_callable(self, value):
        if value is None:
            return None
        if isinstance(value, ScriptFunction):
            return lambda v: value.interp.call_function(value, [v])
        if isinstance(value, _Builtin):
            return lambda v: value(self, [v], {})
        if callable(value):
            return value
        raise ScriptRuntimeError("key= must be a function")


class _LazyIter:
    """Deterministic lazy wrappers (enumerate/zip/reversed) as script values."""

    def __init__(self, items):
        self.items = list(items)

    def materialize(self, meter: Meter):
        return iter(self.items)


class _Builtin:
    def __init__(self, name, fn):
        self.name = name
        self.fn = fn

    def __call__(self, interp: Interpreter, args, kwargs):
        interp.meter.tick(2)
        return self.fn(interp, args, kwargs)


def _charge_materialize(interp, value):
    hint = _length_hint(value)
    if hint is not None:
        interp.meter.charge_alloc(16 * hint)


def _builtin_simple(fn, materializes=False):
    def wrapper(interp: Interpreter, args, kwargs):
        if kwargs:
            raise ScriptRuntimeError("keyword arguments not supported here")
        if materializes:
            for a in args:
                _charge_materialize(interp, a)
        result = fn(*args)
        interp.meter.charge_alloc(_sizeof(result))
        return result

    return wrapper


def _builtin_sorted(interp: Interpreter, args, kwargs):
    if len(args) != 1:
        raise ScriptRuntimeError("sorted() takes one sequence")
    value = args[0]
    if isinstance(value, _LazyIter):
        items = list(value.items)
    elif isinstance(value, _CONTAINER_TYPES):
        _charge_materialize(interp, value)
        items = list(value)
    else:
        raise CapabilityError(f"cannot sort {type(value).__name__}")
    key = interp._as_callable(kwargs.pop("key", None))
    reverse = bool(kwargs.pop("reverse", False))
    if kwargs:
        raise ScriptRuntimeError("sorted() takes key= and reverse= only")
    interp.meter.tick(len(items))
    return sorted(items, key=key, reverse=reverse)


def _builtin_range(interp: Interpreter, args, kwargs):
    if kwargs or not 1 <= len(args) <= 3:
        raise ScriptRuntimeError("range() takes 1 to 3 integers")
    for a in args:
        if not isinstance(a, int) or isinstance(a, bool):
            raise ScriptRuntimeError("range() needs integers")
    return range(*args)


def _conv(fn):
    def conv(interp, args, kwargs):
        if kwargs or len(args) > 2:
            raise ScriptRuntimeError("bad conversion call")
        result = fn(*args)
        interp.meter.charge_alloc(_sizeof(result))
        return result

    return conv


def _materializing(fn):
    def wrapper(interp: Interpreter, args, kwargs):
        if kwargs:
            raise ScriptRuntimeError("keyword arguments not supported here")
        coerced = []
        for a in args:
            if isinstance(a, _LazyIter):
                coerced.append(a.items)
            elif isinstance(a, _CONTAINER_TYPES):
                _charge_materialize(interp, a)
                coerced.append(a)
            elif isinstance(a, (int, float, str, bytes, bool)) or a is None:
                coerced.append(a)
            else:
                raise CapabilityError(f"cannot use {type(a).__name__} here")
        result = fn(*coerced)
        interp.meter.charge_alloc(_sizeof(result))
        return result

    return wrapper


BUILTINS: dict[str, _Builtin] = {
    name: _Builtin(name, fn)
    for name, fn in {
        "len": _builtin_simple(len),
        "range": _builtin_range,
        "sorted": _builtin_sorted,
        "min": _materializing(min),
        "max": _materializing(max),
        "sum": _materializing(sum),
        "abs": _builtin_simple(abs),
        "round": _builtin_simple(round),
        "int": _conv(int),
        "float": _conv(float),
        "bool": _conv(bool),
        "str": _conv(str),
        "chr": _builtin_simple(chr),
        "ord": _builtin_simple(ord),
        "divmod": _builtin_simple(divmod),
        "list": _materializing(list),
        "tuple": _materializing(tuple),
        "dict": _materializing(dict),
        "any": _materializing(any),
        "all": _materializing(all),
        "enumerate": _materializing(lambda it, start=0: _LazyIter(enumerate(it, start))),
        "zip": _materializing(lambda *its: _LazyIter(zip(*its))),
        "reversed": _materializing(lambda it: _LazyIter(reversed(list(it)))),
    }.items()
}


def _validate(tree: ast.AST) -> None:
    """Static screen: only allowed node types, and no dunder identifiers."""
    for node in ast.walk(tree):
        if isinstance(node, ast.Module):
            continue
        if isinstance(node, ast.Starred):
            raise CapabilityError("starred expressions are not available")
        if isinstance(node, (ast.Import, ast.ImportFrom)):
            raise CapabilityError("import is not available")
        if isinstance(node, (ast.Lambda, ast.ClassDef, ast.Try, ast.Raise, ast.With,
                             ast.AsyncFunctionDef, ast.AsyncFor, ast.AsyncWith,
                             ast.Global, ast.Nonlocal, ast.Delete, ast.Assert,
                             ast.Yield, ast.YieldFrom, ast.Await, ast.NamedExpr,
                             ast.SetComp, ast.DictComp, ast.GeneratorExp, ast.Set)):
            raise CapabilityError(f"{type(node).__name__} is not available")
        if isinstance(node, ast.stmt) and not isinstance(node, _ALLOWED_STMT):
            raise CapabilityError(f"statement {type(node).__name__} is not available")
        if isinstance(node, ast.expr) and not isinstance(node, _ALLOWED_EXPR):
            raise CapabilityError(f"expression {type(node).__name__} is not available")
        for ident in _identifiers(node):
            if "__" in ident:
                raise CapabilityError(f"identifier {ident!r} is not available")


def _identifiers(node):
    if isinstance(node, ast.Name):
        yield node.id
    elif isinstance(node, ast.Attribute):
        yield node.attr
    elif isinstance(node, ast.FunctionDef):
        yield node.name
        if node.decorator_list:
            raise CapabilityError("decorators are not available")
        args = node.args
        if args.vararg or args.kwarg or args.kwonlyargs or args.posonlyargs:
            raise CapabilityError("only plain positional parameters are available")
        for a in args.args:
            yield a.arg
    elif isinstance(node, ast.keyword) and node.arg:
        yield node.arg


def run_script(source: str, env: dict, budget: ExecutionBudget, meter: Meter | None = None) -> Meter:
    """Execute one script; returns the meter for metrics reporting."""
    meter = meter or Meter(budget)
    interp = Interpreter(env, meter)
    interp.run(source)
    return meter
