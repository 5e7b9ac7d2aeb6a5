"""Screen a hand-written candidate table with the constraint language.

`require` is a property of the whole selection: at least one selected
equation must carry the feature, so ID 5 can still ride along.
"""
from ductsr.filterlang import explain, parse_facts_file, parse_program, solve

facts = parse_facts_file('''
eq(0, 1, 37396, "Re").
eq(1, 5, 250, "Re*(2.1-8.4*Y**2)").
eq(2, 9, 60, "Re*(2.18-8.46*Y**2)*(1-Z)").
eq(3, 15, 45, "Re*(2.18-8.46*Y**2)*(1-3.89*Z**2)").
eq(4, 12, 30, "Re*(2.2-9.1*Y**4)*(1-Z)").
eq(5, 11, 40, "(2.18-8.46*Y**2)*(1-3.89*Z**2)").
''')
program = parse_program('''
max_complexity = 20
max_loss = 100
forbid = y4
require = re
''')

sel = solve(facts, program)
print(sel.status, [f.id for f in sel.selected])
for verdict in explain(facts, program):
    print(" ", verdict.render())
