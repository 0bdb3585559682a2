"""Ambient-sensor activity recognition with rule-checked activity sequences.

Subpackages and modules are imported lazily by callers; importing the
package itself stays cheap.
"""

__version__ = "0.1.0"
