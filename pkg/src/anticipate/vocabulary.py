from __future__ import annotations

from typing import Iterable, Sequence

from .errors import InvalidArgumentError, UnknownLabelError


class ActionVocabulary:
    """Ordered set of action symbols with a bijective symbol/index map."""

    __slots__ = ("symbols", "_index")

    def __init__(self, symbols: Iterable[str]):
        symbols = tuple(str(s) for s in symbols)
        if len(symbols) < 2:
            raise InvalidArgumentError("vocabulary needs at least 2 symbols")
        index = {s: i for i, s in enumerate(symbols)}
        if len(index) != len(symbols):
            dupes = sorted({s for s in symbols if symbols.count(s) > 1})
            raise InvalidArgumentError(f"duplicate vocabulary symbols: {dupes}")
        self.symbols = symbols
        self._index = index

    @classmethod
    def numbered(cls, size: int, prefix: str = "a") -> "ActionVocabulary":
        return cls(f"{prefix}{i}" for i in range(size))

    def __len__(self) -> int:
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def __contains__(self, symbol) -> bool:
        return symbol in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, ActionVocabulary) and self.symbols == other.symbols

    def __hash__(self) -> int:
        return hash(self.symbols)

    def __repr__(self) -> str:
        return f"ActionVocabulary({list(self.symbols)!r})"

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise UnknownLabelError(f"unknown label {symbol!r}") from None

    def symbol(self, index: int) -> str:
        if not 0 <= index < len(self.symbols):
            raise InvalidArgumentError(f"action index {index} outside 0..{len(self) - 1}")
        return self.symbols[index]

    def encode(self, symbols: Sequence[str]) -> list[int]:
        return [self.index(s) for s in symbols]

    def decode(self, indices: Sequence[int]) -> list[str]:
        return [self.symbol(int(i)) for i in indices]
