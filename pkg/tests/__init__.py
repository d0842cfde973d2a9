"""Test suite for the scholar impact toolkit"""
