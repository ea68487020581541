"""Tests for the GLAM world model, agent and training harness"""
