#pragma once

#include <catch2/catch_amalgamated.hpp>

#include "ldk/common.hpp"

// Catch matcher asserting both that an Error was thrown and which kind.
struct ErrorKindIs : Catch::Matchers::MatcherGenericBase {
    explicit ErrorKindIs(ldk::ErrKind k) : kind(k) {}
    bool match(const ldk::Error& e) const { return e.kind() == kind; }
    std::string describe() const override { return "has the expected error kind"; }
    ldk::ErrKind kind;
};
