"""Minimal PDF text extraction.

Handles the common case for machine-generated manuscripts: uncompressed or
FlateDecode content streams with literal/hex strings shown through Tj, TJ,
' and ".  Page order follows the document page tree when it can be resolved
and stream order otherwise.  Encrypted documents are rejected.
"""

from __future__ import annotations

import re
import zlib
from pathlib import Path

_OBJ_RE = re.compile(rb"(\d+)\s+(\d+)\s+obj\b(.*?)endobj", re.DOTALL)
_STREAM_RE = re.compile(rb"stream\r?\n(.*?)endstream", re.DOTALL)
_FILTER_RE = re.compile(rb"/Filter\s*(\[[^\]]*\]|/\w+)")


class PdfParseError(ValueError):
    pass


def _parse_objects(data: bytes) -> dict[int, bytes]:
    return {int(m.group(1)): m.group(3) for m in _OBJ_RE.finditer(data)}


def _decode_filters(raw: bytes, filters: list[bytes]) -> bytes | None:
    import base64

    data = raw
    for name in filters:
        try:
            if name == b"ASCII85Decode":
                data = base64.a85decode(data.strip(), adobe=True)
            elif name == b"ASCIIHexDecode":
                hex_text = re.sub(rb"[\s>]", b"", data)
                data = bytes.fromhex(hex_text.decode("ascii"))
            elif name == b"FlateDecode":
                data = zlib.decompressobj().decompress(data)
            else:
                return None  # unsupported filter
        except (ValueError, zlib.error):
            return None
    return data


def _object_stream(body: bytes) -> bytes | None:
    match = _STREAM_RE.search(body)
    if match is None:
        return None
    raw = match.group(1)
    header = body[: match.start()]
    filter_match = _FILTER_RE.search(header)
    if filter_match is None:
        return raw
    filters = re.findall(rb"/(\w+)", filter_match.group(1))
    return _decode_filters(raw, filters)


def _ref(body: bytes, key: bytes) -> int | None:
    match = re.search(re.escape(key) + rb"\s+(\d+)\s+\d+\s+R", body)
    return int(match.group(1)) if match else None


def _ref_list(body: bytes, key: bytes) -> list[int]:
    match = re.search(re.escape(key) + rb"\s*\[(.*?)\]", body, re.DOTALL)
    if match:
        return [int(m.group(1)) for m in re.finditer(rb"(\d+)\s+\d+\s+R", match.group(1))]
    single = _ref(body, key)
    return [single] if single is not None else []


def _page_content_objects(data: bytes, objects: dict[int, bytes]) -> list[int]:
    root_num = _ref(data, b"/Root")
    if root_num is None or root_num not in objects:
        return []
    pages_num = _ref(objects[root_num], b"/Pages")
    if pages_num is None or pages_num not in objects:
        return []
    contents: list[int] = []
    stack = [pages_num]
    seen = set()
    while stack:
        num = stack.pop(0)
        if num in seen or num not in objects:
            continue
        seen.add(num)
        body = objects[num]
        kids = _ref_list(body, b"/Kids")
        if kids:
            stack = kids + stack
        elif b"/Page" in body:
            contents.extend(_ref_list(body, b"/Contents"))
    return contents


def _decode_literal(raw: bytes) -> str:
    out = []
    i = 0
    while i < len(raw):
        c = raw[i : i + 1]
        if c == b"\\" and i + 1 < len(raw):
            nxt = raw[i + 1 : i + 2]
            mapping = {b"n": "\n", b"r": "\r", b"t": "\t", b"b": "\b", b"f": "\f",
                       b"(": "(", b")": ")", b"\\": "\\"}
            if nxt in mapping:
                out.append(mapping[nxt])
                i += 2
                continue
            octal = re.match(rb"\\([0-7]{1,3})", raw[i:])
            if octal:
                out.append(chr(int(octal.group(1), 8)))
                i += len(octal.group(0))
                continue
            i += 1
            continue
        out.append(c.decode("latin-1"))
        i += 1
    return "".join(out)


_TEXT_OP_RE = re.compile(
    rb"\((?P<lit>(?:[^()\\]|\\.)*)\)\s*(?P<op>Tj|'|\")"
    rb"|<(?P<hex>[0-9A-Fa-f\s]*)>\s*Tj"
    rb"|\[(?P<arr>(?:[^\[\]\\]|\\.)*)\]\s*TJ"
    rb"|(?P<nl>T\*|TD|Td|ET)",
    re.DOTALL,
)

_ARR_ITEM_RE = re.compile(rb"\((?P<lit>(?:[^()\\]|\\.)*)\)|<(?P<hex>[0-9A-Fa-f\s]*)>|(?P<num>-?\d+(?:\.\d+)?)")

#: TJ kern (thousandths of an em) treated as a word gap.
_WORD_KERN = -150


def _stream_text(stream: bytes) -> str:
    parts: list[str] = []
    for match in _TEXT_OP_RE.finditer(stream):
        if match.group("nl") is not None:
            if parts and not parts[-1].endswith("\n"):
                parts.append("\n")
            continue
        if match.group("lit") is not None:
            parts.append(_decode_literal(match.group("lit")))
            if match.group("op") in (b"'", b'"'):
                parts.append("\n")
        elif match.group("hex") is not None:
            hex_str = re.sub(rb"\s", b"", match.group("hex"))
            if len(hex_str) % 2:
                hex_str += b"0"
            parts.append(bytes.fromhex(hex_str.decode("ascii")).decode("latin-1"))
        elif match.group("arr") is not None:
            for item in _ARR_ITEM_RE.finditer(match.group("arr")):
                if item.group("lit") is not None:
                    parts.append(_decode_literal(item.group("lit")))
                elif item.group("hex") is not None:
                    hex_str = re.sub(rb"\s", b"", item.group("hex"))
                    if len(hex_str) % 2:
                        hex_str += b"0"
                    parts.append(bytes.fromhex(hex_str.decode("ascii")).decode("latin-1"))
                elif float(item.group("num")) <= _WORD_KERN:
                    parts.append(" ")
    return "".join(parts)


def extract_pdf_text(path: str | Path) -> str:
    """Page-ordered text of a PDF manuscript.

    Raises :class:`PdfParseError` for files that are not parseable PDFs and
    for encrypted documents.
    """
    data = Path(path).read_bytes()
    if not data.startswith(b"%PDF"):
        raise PdfParseError(f"{path} is not a PDF file")
    if re.search(rb"/Encrypt\s+\d+\s+\d+\s+R", data):
        raise PdfParseError(f"{path} is encrypted")
    objects = _parse_objects(data)
    if not objects:
        raise PdfParseError(f"{path} contains no objects")

    ordered = _page_content_objects(data, objects)
    if ordered:
        streams = [_object_stream(objects[n]) for n in ordered if n in objects]
    else:
        streams = [_object_stream(body) for _, body in sorted(objects.items())]
    texts = [_stream_text(s) for s in streams if s]
    text = "\n".join(t for t in texts if t.strip())
    return text
