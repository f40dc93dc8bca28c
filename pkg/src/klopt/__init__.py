"""Rates of SGD and PAGER under KL / alpha-PL geometry."""
