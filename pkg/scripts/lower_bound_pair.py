"""Revenue gaps R(1) - R(2) of the two nearby instances, closed form vs steady state."""
from loyalty_lab.experiments import gen_lower_bound_pair, rev_gap_closed_form, rev_gap_steady_state

for d in (0.05, 0.1, 0.2, 0.3, 0.4, 0.5):
    a, b = gen_lower_bound_pair(d)
    print(f"delta={d:.2f}  first {rev_gap_closed_form(d, 'first'):+.6f} ({rev_gap_steady_state(a):+.6f})  "
          f"second {rev_gap_closed_form(d, 'second'):+.6f} ({rev_gap_steady_state(b):+.6f})")
