"""parakern: comprehensive parametric kernel generation.

Turns an annotated parallel loop nest with symbolic program and machine
parameters into a decision tree of kernel variants, each guarded by the
exact constraint system under which it is the preferred choice.
"""

__version__ = "0.1.0"
