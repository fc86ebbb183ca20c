"""Query-adaptive weighted POD for parametric model reduction in optimization loops."""
