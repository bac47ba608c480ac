from typing import Generator, Hashable, Optional
import sys
from itertools import product

import numpy as np
import pandas as pd
if sys.version_info < (3, 11):
    from typing_extensions import Self
else:
    from typing import Self

from .exceptions import DuplicatedKeyError, WrongArrayDimensionException, WrongArrayShapeException


class ResultGrid(dict):
    """
    A dictionary-like table of campaign metrics backed by a 2D NumPy array.

    Rows are labelled by method names and columns by budgets, so that a cell
    is addressed as ``grid['sentinel', 200.0]``. Cells that were never filled
    (for instance because the design was infeasible at that budget) hold NaN.
    """
    __slots__ = ["_row_labels", "_column_labels", "_row_index", "_column_index", "_array", "name"]

    def __init__(
            self,
            row_labels: list[Hashable],
            column_labels: list[Hashable],
            name: str = "value",
            default_initial_value: float = np.nan
    ):
        """
        Initialize an empty result grid.

        Parameters
        ----------
        row_labels : list[Hashable]
            Labels of the rows, typically method names.
        column_labels : list[Hashable]
            Labels of the columns, typically budgets.
        name : str, optional
            Name of the metric held in the grid, used as the value column when
            the grid is exported. Default ``"value"``.
        default_initial_value : float, optional
            Value of unfilled cells, by default NaN.

        Raises
        ------
        DuplicatedKeyError
            If either axis carries duplicate labels.
        """
        super(dict, self).__init__()
        for labels in (row_labels, column_labels):
            if len(labels) != len(set(labels)):
                raise DuplicatedKeyError()
        self._row_labels = list(row_labels)
        self._column_labels = list(column_labels)
        self._row_index = {label: idx for idx, label in enumerate(self._row_labels)}
        self._column_index = {label: idx for idx, label in enumerate(self._column_labels)}
        self.name = name
        self._array = np.full((len(self._row_labels), len(self._column_labels)), default_initial_value, dtype=float)

    def _get_indices(self, item: tuple[Hashable, Hashable]) -> tuple[int, int]:
        if not isinstance(item, tuple) or len(item) != 2:
            raise WrongArrayDimensionException(2, len(item) if isinstance(item, tuple) else 1)
        row, column = item
        return self._row_index[row], self._column_index[column]

    def __getitem__(self, item: tuple[Hashable, Hashable]) -> float:
        """
        Get the value of a cell.

        Parameters
        ----------
        item : tuple
            A ``(row_label, column_label)`` pair.

        Returns
        -------
        float
            The value at the cell.

        Raises
        ------
        WrongArrayDimensionException
            If the key is not a pair.
        KeyError
            If either label is unknown.
        """
        return float(self._array[self._get_indices(item)])

    def __setitem__(self, key: tuple[Hashable, Hashable], value: float) -> None:
        self._array[self._get_indices(key)] = value

    def update(self, new_dict: dict):
        raise TypeError("We cannot update this kind of dict this way!")

    def __iter__(self) -> Generator[tuple[Hashable, Hashable], None, None]:
        for key in product(self._row_labels, self._column_labels):
            yield key

    def __contains__(self, item) -> bool:
        if not isinstance(item, tuple) or len(item) != 2:
            return False
        return item[0] in self._row_index and item[1] in self._column_index

    def keys(self):
        return list(self.__iter__())

    def values(self):
        return [self.__getitem__(key) for key in self.__iter__()]

    def items(self):
        return [(key, self.__getitem__(key)) for key in self.__iter__()]

    def __len__(self) -> int:
        return self._array.size

    def __repr__(self) -> str:
        return f"<ResultGrid '{self.name}': {len(self._row_labels)} rows x {len(self._column_labels)} columns>"

    def __str__(self) -> str:
        return self.__repr__()

    @property
    def row_labels(self) -> list[Hashable]:
        return self._row_labels

    @property
    def column_labels(self) -> list[Hashable]:
        return self._column_labels

    @property
    def shape(self) -> tuple[int, int]:
        return self._array.shape

    def row(self, label: Hashable) -> np.ndarray:
        """
        Return the values of one row as an array aligned with ``column_labels``.
        """
        return self._array[self._row_index[label]].copy()

    def to_jsonfriendly_dict(self) -> dict[str, dict[str, Optional[float]]]:
        """
        Convert the grid to nested plain dictionaries with string keys.

        NaN cells become ``None`` so the output is valid JSON.

        Returns
        -------
        dict[str, dict[str, float | None]]
            ``{row_label: {column_label: value}}``.
        """
        return {
            str(row): {
                str(column): (None if np.isnan(value) else float(value))
                for column, value in zip(self._column_labels, self._array[i])
            }
            for i, row in enumerate(self._row_labels)
        }

    def to_frame(self, row_name: str = "method", column_name: str = "budget") -> pd.DataFrame:
        """
        Convert the grid to a long-format pandas DataFrame.

        Returns
        -------
        pd.DataFrame
            One row per cell with columns ``row_name``, ``column_name`` and the
            grid's ``name``.
        """
        return pd.DataFrame(
            [
                {row_name: row, column_name: column, self.name: value}
                for (row, column), value in self.items()
            ],
            columns=[row_name, column_name, self.name]
        )

    @classmethod
    def from_numpyarray_given_labels(
            cls,
            row_labels: list[Hashable],
            column_labels: list[Hashable],
            numarray: np.ndarray,
            name: str = "value"
    ) -> Self:
        """
        Create a grid from a 2D NumPy array with given labels.

        Raises
        ------
        WrongArrayDimensionException
            If the array is not 2D.
        WrongArrayShapeException
            If the array shape does not match the number of labels.
        """
        grid = cls(row_labels, column_labels, name=name)
        if numarray.ndim != 2:
            raise WrongArrayDimensionException(2, numarray.ndim)
        if numarray.shape != grid.shape:
            raise WrongArrayShapeException(grid.shape, numarray.shape)
        grid._array = np.asarray(numarray, dtype=float)
        return grid
