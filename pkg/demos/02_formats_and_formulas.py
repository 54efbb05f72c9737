"""Table plumbing: formulas, the four wire formats, and safe permutations.

Starts from a hierarchical table with merged headers, adds two formula
cells and resolves them, prints every serialization, and shows that a
data permutation keeps merges intact and the cell multiset unchanged.
"""

import random
from collections import Counter

from tableforge.catalog import STRATEGY_BY_NAME
from tableforge.evolution import apply_permutation, data_permutations, deterministic_perturb
from tableforge.formats import ParseHints, TableFormat, parse, serialize
from tableforge.formulas import evaluate_table
from tableforge.table_model import Cell, validate
from tableforge.testing import random_table

table = random_table(random.Random(5), with_merges=True, seq=1)
print(f"{table.table_type.value} table, {table.n_rows}x{table.n_cols}, "
      f"{len(table.merged_regions)} merged regions")

# drop two formulas into the last data row; references are 1-based R<i>C<j>
data_row = table.n_rows
data_col = table.header_spec.row_header_levels + 1
grid = [list(row) for row in table.cells]
grid[-1][-1] = Cell(raw_text=f"=SUM(R{data_row}C{data_col}:R{data_row}C{table.n_cols - 1})")
grid[-1][-2] = Cell(raw_text=f"=R{data_row}C{data_col} * 2")
table = table.with_cells(grid)

print("\n=== formula resolution ===")
resolved = evaluate_table(table)
for r, row in enumerate(resolved.cells):
    for c, cell in enumerate(row):
        if cell.raw_text.startswith("="):
            print(f"R{r + 1}C{c + 1}: {cell.raw_text}  ->  {cell.display_text}")

print("\n=== serializations ===")
for fmt in TableFormat:
    print(f"--- {fmt.value} ---")
    print(serialize(resolved, fmt))

# Round tripping wants raw text == display text, so it is shown on the
# plain table: formula cells serialize as their resolved numbers and
# would come back as literals.
plain = random_table(random.Random(5), with_merges=True, seq=1)
print("=== round trip ===")
for fmt in TableFormat:
    back = parse(serialize(plain, fmt), fmt, hints=ParseHints.from_table(plain))
    label = "identity" if back == plain else "content only (merges flattened)"
    print(f"{fmt.value:>8}: {label}")

print("\n=== order permutation ===")
row_perm, col_perm = data_permutations(plain, random.Random(3))
permuted = apply_permutation(plain, row_perm, col_perm)
same_counts = Counter(c.display_text for row in plain.cells for c in row) == Counter(
    c.display_text for row in permuted.cells for c in row
)
print(f"row order {row_perm}")
print(f"col order {col_perm}")
print(f"valid={validate(permuted).ok}  multiset unchanged={same_counts}")
print(serialize(permuted, TableFormat.MARKDOWN))

print("=== deterministic strategy perturbations ===")
for name in ("Change Format", "Order Permutation"):
    out, fmt = deterministic_perturb(plain, STRATEGY_BY_NAME[name], random.Random(5))
    print(f"{name}: serialized as {fmt.value}, {out.n_rows}x{out.n_cols}, valid={validate(out).ok}")
