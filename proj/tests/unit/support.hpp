#pragma once

#include <gtest/gtest.h>

#include <functional>

#include "prefquery/error.hpp"

// Passes when `fn` throws prefquery::Error of the given kind.
inline ::testing::AssertionResult throws_kind(const std::function<void()>& fn, prefquery::ErrorKind kind) {
  try {
    fn();
  } catch (const prefquery::Error& e) {
    if (e.kind() == kind) return ::testing::AssertionSuccess();
    return ::testing::AssertionFailure() << "threw " << prefquery::to_string(e.kind()) << ": " << e.what();
  } catch (const std::exception& e) {
    return ::testing::AssertionFailure() << "threw foreign exception: " << e.what();
  }
  return ::testing::AssertionFailure() << "did not throw";
}

#define EXPECT_KIND(stmt, kind) EXPECT_TRUE(throws_kind([&] { stmt; }, prefquery::ErrorKind::kind))
