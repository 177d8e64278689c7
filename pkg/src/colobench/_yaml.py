"""Restricted YAML loading for configuration documents.

Only plain maps, sequences and scalars are allowed: anchors, aliases and
explicit tags are rejected, as are duplicate mapping keys. A line consisting
solely of ``...`` is treated as an elision marker (as in abbreviated listings)
and dropped before parsing.
"""

from __future__ import annotations

from typing import Any

import yaml

from .errors import ConfigSyntaxError

_COLLECTION_START = (yaml.MappingStartEvent, yaml.SequenceStartEvent)
# libyaml bindings when present; same grammar, much faster
_Loader = getattr(yaml, "CSafeLoader", yaml.SafeLoader)
_Dumper = getattr(yaml, "CSafeDumper", yaml.SafeDumper)


def _mark(exc: Exception) -> tuple[int | None, int | None]:
    mark = getattr(exc, "problem_mark", None) or getattr(exc, "context_mark", None)
    if mark is None:
        return None, None
    return mark.line + 1, mark.column + 1


def strip_elisions(text: str) -> str:
    return "\n".join(line for line in text.splitlines() if line.strip() != "...")


def _check_events(text: str) -> None:
    for event in yaml.parse(text, Loader=_Loader):
        line, col = event.start_mark.line + 1, event.start_mark.column + 1
        if isinstance(event, yaml.AliasEvent):
            raise ConfigSyntaxError("aliases are not supported", line, col)
        if isinstance(event, (yaml.ScalarEvent, *_COLLECTION_START)):
            if event.anchor is not None:
                raise ConfigSyntaxError("anchors are not supported", line, col)
            if event.tag is not None and event.tag != "!":
                raise ConfigSyntaxError(f"explicit tags are not supported ({event.tag})", line, col)
        if isinstance(event, yaml.DocumentStartEvent) and event.tags:
            raise ConfigSyntaxError("%TAG directives are not supported", line, col)


def _check_duplicates(node: yaml.Node) -> None:
    stack = [node]
    while stack:
        current = stack.pop()
        if isinstance(current, yaml.MappingNode):
            seen: set[Any] = set()
            for key_node, value_node in current.value:
                if isinstance(key_node, yaml.ScalarNode):
                    if key_node.value in seen:
                        raise ConfigSyntaxError(
                            f"duplicate key {key_node.value!r}",
                            key_node.start_mark.line + 1,
                            key_node.start_mark.column + 1,
                        )
                    seen.add(key_node.value)
                stack.append(key_node)
                stack.append(value_node)
        elif isinstance(current, yaml.SequenceNode):
            stack.extend(current.value)


def load_document(source: str | bytes) -> Any:
    """Parse ``source`` into plain Python containers.

    Raises :class:`ConfigSyntaxError` for anything that is not a single
    well-formed document in the supported subset.
    """
    if isinstance(source, (bytes, bytearray)):
        try:
            source = bytes(source).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigSyntaxError(f"document is not valid UTF-8 ({exc.reason} at byte {exc.start})") from None
    if not isinstance(source, str):
        raise ConfigSyntaxError(f"expected text, got {type(source).__name__}")
    text = strip_elisions(source)
    try:
        _check_events(text)
        loader = _Loader(text)
        try:
            node = loader.get_single_node()
            if node is None:
                return None
            _check_duplicates(node)
            return loader.construct_document(node)
        finally:
            loader.dispose()
    except ConfigSyntaxError:
        raise
    except yaml.YAMLError as exc:
        line, col = _mark(exc)
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigSyntaxError(problem, line, col) from None
    except (ValueError, TypeError, RecursionError, OverflowError) as exc:
        raise ConfigSyntaxError(f"unreadable document: {exc}") from None


def dump_document(data: Any) -> str:
    return yaml.dump(data, Dumper=_Dumper, sort_keys=False, default_flow_style=False, allow_unicode=True, width=1000)
